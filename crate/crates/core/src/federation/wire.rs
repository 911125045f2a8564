//! Canonical textual encoding of protocol messages.
//!
//! Keys are written in a fixed order, optional keys are omitted when absent,
//! and every float is written with 17 significant digits so that
//! `decode(encode(m)) == m` bit for bit.

use std::fmt::Write as _;

use serde_json::{Map, Value};
use thiserror::Error;

use super::{LocalizeRequest, LocalizeResponse, RegistryEntry, RegistryQuery, Status};
use crate::geometry::{FrameId, Pose, Rotation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Syntax(String),
    #[error("unknown message type")]
    UnknownType,
    #[error("missing {0}")]
    MissingKey(String),
    #[error("invalid {0}")]
    InvalidValue(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid status")]
    InvalidStatus,
    #[error("unexpected pose")]
    UnexpectedPose,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    LocalizeRequest(LocalizeRequest),
    LocalizeResponse(LocalizeResponse),
    RegistryQuery(RegistryQuery),
    RegistryResult(Vec<RegistryEntry>),
}

fn write_f64(out: &mut String, x: f64) {
    if x.is_finite() {
        write!(out, "{x:.16e}").expect("write to String");
    } else {
        out.push_str("null");
    }
}

fn write_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings always serialise"));
}

fn write_key(out: &mut String, key: &str) {
    out.push(',');
    write_str(out, key);
    out.push(':');
}

fn write_f64_array(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_f64(out, *x);
    }
    out.push(']');
}

fn write_pose(out: &mut String, p: &Pose) {
    out.push_str("{\"t\":");
    write_f64_array(out, p.translation.as_slice());
    out.push_str(",\"q\":");
    write_f64_array(out, &p.rotation.wxyz());
    out.push('}');
}

fn open(out: &mut String, kind: &str) {
    out.push_str("{\"type\":");
    write_str(out, kind);
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = String::new();
    match msg {
        Message::LocalizeRequest(r) => {
            open(&mut out, "localize_request");
            write_key(&mut out, "query_id");
            write_str(&mut out, &r.query_id);
            write_key(&mut out, "pose");
            write_pose(&mut out, &r.device_world_pose);
            write_key(&mut out, "timestamp");
            write_f64(&mut out, r.timestamp);
        }
        Message::LocalizeResponse(r) => {
            open(&mut out, "localize_response");
            write_key(&mut out, "query_id");
            write_str(&mut out, &r.query_id);
            write_key(&mut out, "status");
            write_str(&mut out, r.status.as_str());
            if let Some(p) = &r.pose {
                write_key(&mut out, "pose");
                write_pose(&mut out, p);
            }
            if let Some(c) = r.confidence {
                write_key(&mut out, "confidence");
                write_f64(&mut out, c);
            }
            write_key(&mut out, "service_id");
            write_str(&mut out, &r.service_id);
            write_key(&mut out, "frame");
            write_str(&mut out, r.frame.as_str());
        }
        Message::RegistryQuery(q) => {
            open(&mut out, "registry_query");
            write_key(&mut out, "gps");
            write_f64_array(&mut out, &q.gps);
            if let Some(list) = &q.tld_whitelist {
                write_key(&mut out, "tld_whitelist");
                out.push('[');
                for (i, s) in list.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write_str(&mut out, s);
                }
                out.push(']');
            }
            if let Some(m) = q.max_services {
                write_key(&mut out, "max_services");
                write!(out, "{m}").expect("write to String");
            }
        }
        Message::RegistryResult(entries) => {
            open(&mut out, "registry_result");
            write_key(&mut out, "services");
            out.push('[');
            for (i, e) in entries.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str("{\"service_id\":");
                write_str(&mut out, &e.service_id);
                write_key(&mut out, "domain_name");
                write_str(&mut out, &e.domain_name);
                write_key(&mut out, "endpoint");
                write_str(&mut out, &e.endpoint);
                write_key(&mut out, "frame");
                write_str(&mut out, e.frame.as_str());
                out.push('}');
            }
            out.push(']');
        }
    }
    out.push('}');
    out.into_bytes()
}

struct Fields<'a> {
    map: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Result<&'a Value, WireError> {
        self.map
            .get(key)
            .ok_or_else(|| WireError::MissingKey(key.to_string()))
    }

    fn opt(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key)
    }

    fn string(&self, key: &str) -> Result<String, WireError> {
        as_string(self.get(key)?, key)
    }

    fn float(&self, key: &str) -> Result<f64, WireError> {
        as_f64(self.get(key)?, key)
    }
}

fn as_string(v: &Value, key: &str) -> Result<String, WireError> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| WireError::InvalidValue(key.to_string()))
}

fn as_f64(v: &Value, key: &str) -> Result<f64, WireError> {
    match v {
        Value::Null => Err(WireError::NonFinite(key.to_string())),
        Value::Number(n) => match n.as_f64() {
            Some(x) if x.is_finite() => Ok(x),
            _ => Err(WireError::NonFinite(key.to_string())),
        },
        _ => Err(WireError::InvalidValue(key.to_string())),
    }
}

fn as_f64_array<const N: usize>(v: &Value, key: &str) -> Result<[f64; N], WireError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == N)
        .ok_or_else(|| WireError::InvalidValue(key.to_string()))?;
    let mut out = [0.0; N];
    for (slot, item) in out.iter_mut().zip(arr) {
        *slot = as_f64(item, key)?;
    }
    Ok(out)
}

fn as_frame(v: &Value, key: &str) -> Result<FrameId, WireError> {
    FrameId::new(as_string(v, key)?).map_err(|_| WireError::InvalidValue(key.to_string()))
}

fn as_pose(v: &Value) -> Result<Pose, WireError> {
    let map = v
        .as_object()
        .ok_or_else(|| WireError::InvalidValue("pose".into()))?;
    let f = Fields { map };
    let t: [f64; 3] = as_f64_array(f.get("t")?, "t")?;
    let q: [f64; 4] = as_f64_array(f.get("q")?, "q")?;
    let rotation = Rotation::from_wxyz(q).map_err(|_| WireError::InvalidValue("q".into()))?;
    Ok(Pose::new(rotation, t.into()))
}

pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| WireError::Syntax(e.to_string()))?;
    let map = value
        .as_object()
        .ok_or_else(|| WireError::Syntax("expected an object".into()))?;
    let f = Fields { map };
    match f.string("type")?.as_str() {
        "localize_request" => Ok(Message::LocalizeRequest(LocalizeRequest {
            query_id: f.string("query_id")?,
            device_world_pose: as_pose(f.get("pose")?)?,
            timestamp: f.float("timestamp")?,
        })),
        "localize_response" => {
            let status = Status::parse(&f.string("status")?).ok_or(WireError::InvalidStatus)?;
            let pose = f.opt("pose").map(as_pose).transpose()?;
            match (status, &pose) {
                (Status::Ok, None) => return Err(WireError::MissingKey("pose".into())),
                (Status::OutOfCoverage | Status::Error, Some(_)) => {
                    return Err(WireError::UnexpectedPose)
                }
                _ => {}
            }
            let confidence = f
                .opt("confidence")
                .map(|v| as_f64(v, "confidence"))
                .transpose()?;
            if confidence.is_some_and(|c| !(0.0..=1.0).contains(&c)) {
                return Err(WireError::InvalidValue("confidence".into()));
            }
            Ok(Message::LocalizeResponse(LocalizeResponse {
                query_id: f.string("query_id")?,
                status,
                pose,
                confidence,
                service_id: f.string("service_id")?,
                frame: as_frame(f.get("frame")?, "frame")?,
            }))
        }
        "registry_query" => {
            let tld_whitelist = f
                .opt("tld_whitelist")
                .map(|v| {
                    v.as_array()
                        .ok_or_else(|| WireError::InvalidValue("tld_whitelist".into()))?
                        .iter()
                        .map(|s| as_string(s, "tld_whitelist"))
                        .collect::<Result<Vec<_>, _>>()
                })
                .transpose()?;
            let max_services = f
                .opt("max_services")
                .map(|v| {
                    v.as_u64()
                        .filter(|&m| m >= 1)
                        .map(|m| m as usize)
                        .ok_or_else(|| WireError::InvalidValue("max_services".into()))
                })
                .transpose()?;
            Ok(Message::RegistryQuery(RegistryQuery {
                gps: as_f64_array(f.get("gps")?, "gps")?,
                tld_whitelist,
                max_services,
            }))
        }
        "registry_result" => {
            let services = f
                .get("services")?
                .as_array()
                .ok_or_else(|| WireError::InvalidValue("services".into()))?;
            let entries = services
                .iter()
                .map(|s| {
                    let map = s
                        .as_object()
                        .ok_or_else(|| WireError::InvalidValue("services".into()))?;
                    let e = Fields { map };
                    Ok(RegistryEntry {
                        service_id: e.string("service_id")?,
                        domain_name: e.string("domain_name")?,
                        endpoint: e.string("endpoint")?,
                        frame: as_frame(e.get("frame")?, "frame")?,
                    })
                })
                .collect::<Result<Vec<_>, WireError>>()?;
            Ok(Message::RegistryResult(entries))
        }
        _ => Err(WireError::UnknownType),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn response() -> LocalizeResponse {
        LocalizeResponse {
            query_id: "q1".into(),
            status: Status::Ok,
            pose: Some(Pose::new(Rotation::rz(0.1), Vector3::new(0.1, -2.5, 1e-7))),
            confidence: Some(0.8125),
            service_id: "lab".into(),
            frame: FrameId::new("V_lab").unwrap(),
        }
    }

    #[test]
    fn response_round_trip() {
        let m = Message::LocalizeResponse(response());
        assert_eq!(decode(&encode(&m)).unwrap(), m);
    }

    #[test]
    fn canonical_text() {
        let m = Message::RegistryQuery(RegistryQuery {
            gps: [1.5, -2.0],
            tld_whitelist: Some(vec![".edu".into()]),
            max_services: Some(3),
        });
        let text = String::from_utf8(encode(&m)).unwrap();
        assert_eq!(
            text,
            r#"{"type":"registry_query","gps":[1.5000000000000000e0,-2.0000000000000000e0],"tld_whitelist":[".edu"],"max_services":3}"#
        );
    }

    #[test]
    fn named_decode_errors() {
        let bad_status = r#"{"type":"localize_response","query_id":"q","status":"BANANA","service_id":"s","frame":"V"}"#;
        assert_eq!(decode(bad_status.as_bytes()).unwrap_err().to_string(), "invalid status");
        let no_pose = r#"{"type":"localize_response","query_id":"q","status":"OK","service_id":"s","frame":"V"}"#;
        assert_eq!(decode(no_pose.as_bytes()).unwrap_err().to_string(), "missing pose");
        let null_ts = r#"{"type":"localize_request","query_id":"q","pose":{"t":[0,0,0],"q":[1,0,0,0]},"timestamp":null}"#;
        assert_eq!(decode(null_ts.as_bytes()).unwrap_err().to_string(), "non-finite timestamp");
        assert_eq!(decode(br#"{"type":"nope"}"#).unwrap_err(), WireError::UnknownType);
        assert!(matches!(decode(b"{"), Err(WireError::Syntax(_))));
    }

    #[test]
    fn out_of_coverage_has_no_pose() {
        let mut r = response();
        r.status = Status::OutOfCoverage;
        let text = encode(&Message::LocalizeResponse(r));
        assert_eq!(decode(&text).unwrap_err(), WireError::UnexpectedPose);
    }
}
