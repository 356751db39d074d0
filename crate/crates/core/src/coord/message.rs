//! Wire vocabulary between Level 0 and Level 1.
//!
//! Every message is one minified JSON object terminated by a single LF.
//! The `"type"` key selects the variant. Coordinates are written in plain
//! decimal notation with at most six fractional digits.

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::CoordError;
use crate::model::{EntityId, EntityKind, InstanceId};

pub const PROTOCOL_VERSION: u32 = 1;

/// Rounds to the six fractional digits carried on the wire.
pub fn wire_round(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn format_coord(v: f64) -> String {
    let r = wire_round(v);
    if r == 0.0 {
        return "0.0".to_owned();
    }
    let mut s = format!("{r:.6}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.push('0');
    }
    s
}

fn coord<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !v.is_finite() {
        return Err(serde::ser::Error::custom(format!("non-finite coordinate {v}")));
    }
    RawValue::from_string(format_coord(*v))
        .map_err(serde::ser::Error::custom)?
        .serialize(s)
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// State of one delegated entity, in the instance's local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: EntityId,
    #[serde(serialize_with = "coord")]
    pub x: f64,
    #[serde(serialize_with = "coord")]
    pub y: f64,
    pub kind: EntityKind,
    #[serde(default, skip_serializing_if = "is_false")]
    pub arrived: bool,
    /// Hop count of the route discovered for this entity, once known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hops: Option<u32>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub timed_out: bool,
}

impl EntityRecord {
    pub fn new(id: EntityId, x: f64, y: f64, kind: EntityKind) -> Self {
        Self {
            id,
            x,
            y,
            kind,
            arrived: false,
            hops: None,
            timed_out: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub rreq: u64,
    pub rrep: u64,
    pub arrivals: u64,
    pub events_processed: u64,
}

impl std::ops::AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.rreq += o.rreq;
        self.rrep += o.rrep;
        self.arrivals += o.arrivals;
        self.events_processed += o.events_processed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitPayload {
    pub instance_id: InstanceId,
    pub seed: u64,
    pub grid_side: usize,
    pub fine_steps: u32,
    /// Extent of the local frame (the delegating region translated to the origin).
    #[serde(serialize_with = "coord")]
    pub width: f64,
    #[serde(serialize_with = "coord")]
    pub height: f64,
    pub entities: Vec<EntityRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPayload {
    pub timestep: u32,
    pub entities: Vec<EntityRecord>,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalPayload {
    pub entities: Vec<EntityRecord>,
    pub counters: Counters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    VersionMismatch,
    ProtocolViolation,
    BadInit,
    SimulationFailure,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CoordMessage {
    Hello { version: u32 },
    Init(InitPayload),
    Continue { timestep: u32 },
    StepResult(StepPayload),
    End,
    Final(FinalPayload),
    Error { code: ErrorCode, detail: String },
}

impl CoordMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            CoordMessage::Hello { .. } => "HELLO",
            CoordMessage::Init(_) => "INIT",
            CoordMessage::Continue { .. } => "CONTINUE",
            CoordMessage::StepResult(_) => "STEP_RESULT",
            CoordMessage::End => "END",
            CoordMessage::Final(_) => "FINAL",
            CoordMessage::Error { .. } => "ERROR",
        }
    }
}

pub fn encode(msg: &CoordMessage) -> Vec<u8> {
    let mut out = serde_json::to_vec(msg).expect("coordination messages always serialize");
    out.push(b'\n');
    out
}

/// Parses exactly one LF-terminated line.
pub fn decode(line: &[u8]) -> Result<CoordMessage, CoordError> {
    let body = line
        .strip_suffix(b"\n")
        .ok_or_else(|| CoordError::Malformed("line is not LF-terminated".into()))?;
    if body.contains(&b'\n') || body.contains(&b'\r') {
        return Err(CoordError::Malformed("embedded line break".into()));
    }
    serde_json::from_slice(body).map_err(|e| CoordError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn text(m: &CoordMessage) -> String {
        String::from_utf8(encode(m)).unwrap()
    }

    #[test]
    fn fixed_spellings() {
        assert_eq!(text(&CoordMessage::Continue { timestep: 7 }), "{\"type\":\"CONTINUE\",\"timestep\":7}\n");
        assert_eq!(text(&CoordMessage::End), "{\"type\":\"END\"}\n");
        assert_eq!(
            text(&CoordMessage::Hello { version: PROTOCOL_VERSION }),
            "{\"type\":\"HELLO\",\"version\":1}\n"
        );
        assert_eq!(
            text(&CoordMessage::Error { code: ErrorCode::VersionMismatch, detail: "want 1".into() }),
            "{\"type\":\"ERROR\",\"code\":\"version_mismatch\",\"detail\":\"want 1\"}\n"
        );
    }

    #[test]
    fn init_layout() {
        let m = CoordMessage::Init(InitPayload {
            instance_id: InstanceId(3),
            seed: 99,
            grid_side: 10,
            fine_steps: 100,
            width: 790.5,
            height: 3162.0,
            entities: vec![EntityRecord::new(EntityId(12), 1.0 / 3.0, 0.000001, EntityKind::Mobile)],
        });
        assert_eq!(
            text(&m),
            "{\"type\":\"INIT\",\"instance_id\":3,\"seed\":99,\"grid_side\":10,\"fine_steps\":100,\
             \"width\":790.5,\"height\":3162.0,\
             \"entities\":[{\"id\":12,\"x\":0.333333,\"y\":0.000001,\"kind\":\"mobile\"}]}\n"
        );
    }

    #[test]
    fn step_result_layout() {
        let mut rec = EntityRecord::new(EntityId(1), 2.0, -0.0000001, EntityKind::Static);
        rec.arrived = true;
        rec.hops = Some(5);
        let m = CoordMessage::StepResult(StepPayload {
            timestep: 4,
            entities: vec![rec],
            counters: Counters { rreq: 1, rrep: 2, arrivals: 3, events_processed: 4 },
        });
        assert_eq!(
            text(&m),
            "{\"type\":\"STEP_RESULT\",\"timestep\":4,\"entities\":[{\"id\":1,\"x\":2.0,\"y\":0.0,\
             \"kind\":\"static\",\"arrived\":true,\"hops\":5}],\
             \"counters\":{\"rreq\":1,\"rrep\":2,\"arrivals\":3,\"events_processed\":4}}\n"
        );
    }

    #[test]
    fn decode_rejects_bad_framing() {
        assert!(decode(b"{\"type\":\"END\"}").is_err());
        assert!(decode(b"{\"type\":\"END\"}\r\n").is_err());
        assert!(decode(b"{\"type\":\"NOPE\"}\n").is_err());
        assert_eq!(decode(b"{\"type\":\"END\"}\n").unwrap(), CoordMessage::End);
    }

    fn micro() -> impl Strategy<Value = f64> {
        (-5_000_000_000i64..5_000_000_000).prop_map(|k| k as f64 / 1e6)
    }

    fn record() -> impl Strategy<Value = EntityRecord> {
        (any::<u64>(), micro(), micro(), any::<bool>(), any::<bool>(), prop::option::of(0u32..40), any::<bool>())
            .prop_map(|(id, x, y, mobile, arrived, hops, timed_out)| EntityRecord {
                id: EntityId(id),
                x,
                y,
                kind: if mobile { EntityKind::Mobile } else { EntityKind::Static },
                arrived,
                hops,
                timed_out,
            })
    }

    fn counters() -> impl Strategy<Value = Counters> {
        (any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>()).prop_map(|(a, b, c, d)| Counters {
            rreq: a,
            rrep: b,
            arrivals: c,
            events_processed: d,
        })
    }

    fn message() -> impl Strategy<Value = CoordMessage> {
        prop_oneof![
            any::<u32>().prop_map(|version| CoordMessage::Hello { version }),
            (any::<u64>(), any::<u64>(), 1usize..20, 1u32..1000, micro(), micro(), prop::collection::vec(record(), 0..6))
                .prop_map(|(i, seed, grid_side, fine_steps, width, height, entities)| {
                    CoordMessage::Init(InitPayload {
                        instance_id: InstanceId(i),
                        seed,
                        grid_side,
                        fine_steps,
                        width,
                        height,
                        entities,
                    })
                }),
            any::<u32>().prop_map(|timestep| CoordMessage::Continue { timestep }),
            (any::<u32>(), prop::collection::vec(record(), 0..6), counters())
                .prop_map(|(timestep, entities, counters)| CoordMessage::StepResult(StepPayload { timestep, entities, counters })),
            Just(CoordMessage::End),
            (prop::collection::vec(record(), 0..6), counters())
                .prop_map(|(entities, counters)| CoordMessage::Final(FinalPayload { entities, counters })),
            ".*".prop_map(|detail| CoordMessage::Error { code: ErrorCode::ProtocolViolation, detail }),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(m in message()) {
            let bytes = encode(&m);
            prop_assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
            prop_assert_eq!(decode(&bytes).unwrap(), m);
        }
    }
}
