use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::Vector2;
use rand::seq::index::sample;

use super::{FederationError, RegistryQuery, ServiceDescriptor};
use crate::rng::stream;

/// Extra discovery radius around each coverage circle, meters. Absorbs GPS
/// error on the device side.
pub const DEFAULT_DISCOVERY_SLACK: f64 = 10.0;

/// Maps ground-plane positions to the services covering them.
#[derive(Debug)]
pub struct Registry {
    services: Vec<ServiceDescriptor>,
    slack: f64,
    seed: u64,
    queries: AtomicU64,
}

impl Registry {
    pub fn new(services: Vec<ServiceDescriptor>, seed: u64) -> Result<Self, FederationError> {
        let mut ids = BTreeSet::new();
        for s in &services {
            s.validate()?;
            if !ids.insert(s.service_id.clone()) {
                return Err(FederationError::DuplicateService(s.service_id.clone()));
            }
        }
        Ok(Self {
            services,
            slack: DEFAULT_DISCOVERY_SLACK,
            seed,
            queries: AtomicU64::new(0),
        })
    }

    pub fn with_slack(mut self, slack: f64) -> Self {
        self.slack = slack;
        self
    }

    pub fn services(&self) -> &[ServiceDescriptor] {
        &self.services
    }

    pub fn get(&self, service_id: &str) -> Option<&ServiceDescriptor> {
        self.services.iter().find(|s| s.service_id == service_id)
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn query(&self, q: &RegistryQuery) -> Result<Vec<ServiceDescriptor>, FederationError> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        registry_query(q, &self.services, self.slack, self.seed)
    }
}

fn suffix_matches(domain: &str, suffix: &str) -> bool {
    let domain = domain.to_ascii_lowercase();
    let suffix = suffix.to_ascii_lowercase();
    let bare = suffix.trim_start_matches('.');
    if bare.is_empty() {
        return false;
    }
    domain == bare || domain.ends_with(&format!(".{bare}"))
}

/// Services whose coverage (inflated by `slack`) contains the query point,
/// closest first.
pub fn registry_query(
    q: &RegistryQuery,
    services: &[ServiceDescriptor],
    slack: f64,
    seed: u64,
) -> Result<Vec<ServiceDescriptor>, FederationError> {
    q.validate()?;
    let gps = Vector2::from(q.gps);
    let mut matches: Vec<(f64, &ServiceDescriptor)> = services
        .iter()
        .filter(|s| s.coverage.distance(&gps) <= s.coverage.radius + slack)
        .filter(|s| match &q.tld_whitelist {
            Some(list) => list.iter().any(|suffix| suffix_matches(&s.domain_name, suffix)),
            None => true,
        })
        .map(|s| (s.coverage.distance(&gps), s))
        .collect();
    matches.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.service_id.cmp(&b.1.service_id)));

    if let Some(max) = q.max_services {
        if matches.len() > max {
            let gps_key = format!("{:016x}{:016x}", q.gps[0].to_bits(), q.gps[1].to_bits());
            let mut rng = stream(seed, &["registry", &gps_key]);
            let mut keep: Vec<usize> = sample(&mut rng, matches.len(), max).into_vec();
            keep.sort_unstable();
            matches = keep.into_iter().map(|i| matches[i]).collect();
        }
    }
    Ok(matches.into_iter().map(|(_, s)| s.clone()).collect())
}
