use std::sync::Arc;
use std::time::Duration;

use fedvps_core::client::{ClientSession, CycleInput};
use fedvps_core::federation::transport::{tcp_call, Federation, Loopback, TcpFederation, TcpServer, TransportError};
use fedvps_core::federation::wire::Message;
use fedvps_core::federation::{LocalizeRequest, Registry, RegistryQuery, SimulatedService, Status};
use fedvps_core::harness::presets;
use fedvps_core::geometry::{compose, inverse};
use fedvps_core::Pose;

struct Deployment {
    _servers: Vec<TcpServer>,
    registry_addr: String,
    registry: Arc<Registry>,
    services: Vec<Arc<SimulatedService>>,
}

fn deploy(seed: u64) -> Deployment {
    let cfg = presets::crossing();
    let mut servers = Vec::new();
    let mut descriptors = Vec::new();
    let mut services = Vec::new();
    for d in &cfg.services {
        // bind first so the registry can advertise the real port
        let placeholder = Arc::new(SimulatedService::new(d.clone(), seed));
        let server = TcpServer::bind("127.0.0.1:0", placeholder.clone()).unwrap();
        let mut d = d.clone();
        d.endpoint = format!("tcp://{}", server.addr());
        descriptors.push(d);
        services.push(placeholder);
        servers.push(server);
    }
    let registry = Arc::new(Registry::new(descriptors, seed).unwrap());
    let reg_server = TcpServer::bind("127.0.0.1:0", registry.clone()).unwrap();
    let registry_addr = reg_server.addr().to_string();
    servers.push(reg_server);
    Deployment {
        _servers: servers,
        registry_addr,
        registry,
        services,
    }
}

#[test]
fn discovery_over_tcp_matches_registry() {
    let dep = deploy(3);
    let fed = TcpFederation::new(dep.registry_addr.clone());
    let q = RegistryQuery::at([0.0, 0.0]);
    let over_tcp = fed.discover(&q).unwrap();
    let direct: Vec<_> = dep.registry.query(&q).unwrap().iter().map(|s| s.entry()).collect();
    assert_eq!(over_tcp, direct);
    assert!(!over_tcp.is_empty());
    assert!(over_tcp.iter().all(|e| e.endpoint.starts_with("tcp://")));
}

#[test]
fn tcp_and_loopback_sessions_agree_bit_for_bit() {
    let dep = deploy(11);
    let tcp = TcpFederation::new(dep.registry_addr.clone());
    // an identically seeded in-process federation over the same descriptors
    let twin_services: Vec<_> = dep
        .registry
        .services()
        .iter()
        .map(|d| Arc::new(SimulatedService::new(d.clone(), 11)))
        .collect();
    let twin_registry = Arc::new(Registry::new(dep.registry.services().to_vec(), 11).unwrap());
    let loopback = Loopback::new(twin_registry, twin_services);

    let cfg = presets::crossing();
    let mut a = ClientSession::new(cfg.client.clone());
    let mut b = ClientSession::new(cfg.client.clone());
    let start = cfg.device_path.pose_at(0.0);
    for t in cfg.cycle_times().into_iter().take(12) {
        let world = cfg.device_path.pose_at(t);
        let input = CycleInput {
            t,
            vio_pose: compose(&inverse(&start), &world),
            query_pose: world,
            gps: [world.translation.x, world.translation.y],
        };
        let x = a.localization_cycle(&tcp, &input);
        let y = b.localization_cycle(&loopback, &input);
        assert_eq!(x.selected_service, y.selected_service, "cycle {}", x.cycle);
        assert_eq!(x.pose, y.pose, "cycle {}", x.cycle);
        assert_eq!(x.responses, y.responses);
    }
    let received: u64 = dep.services.iter().map(|s| s.received_count()).sum();
    assert_eq!(received, a.requests_sent());
}

#[test]
fn wrong_message_type_yields_error_status() {
    let dep = deploy(1);
    let endpoint = &dep.registry.services()[0].endpoint;
    let reply = tcp_call(endpoint, &Message::RegistryQuery(RegistryQuery::at([0.0, 0.0])), Duration::from_secs(2)).unwrap();
    match reply {
        Message::LocalizeResponse(r) => assert_eq!(r.status, Status::Error),
        other => panic!("unexpected reply {other:?}"),
    }
}

#[test]
fn unreachable_endpoint_is_an_error() {
    let req = Message::LocalizeRequest(LocalizeRequest {
        query_id: "q".into(),
        device_world_pose: Pose::identity(),
        timestamp: 0.0,
    });
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = tcp_call(&format!("127.0.0.1:{port}"), &req, Duration::from_millis(200)).unwrap_err();
    assert!(matches!(err, TransportError::Io(_) | TransportError::Timeout), "{err:?}");
    let err = tcp_call("not an address", &req, Duration::from_millis(200)).unwrap_err();
    assert!(matches!(err, TransportError::UnknownEndpoint(_)));
}
