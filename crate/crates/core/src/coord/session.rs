//! Session lifecycle: HELLO -> INIT -> (CONTINUE -> STEP_RESULT)* -> END -> FINAL.
//!
//! Level 0 drives; Level 1 only ever answers. Both ends validate every
//! message against the same [`Lockstep`] machine.

use log::debug;

use super::message::{
    CoordMessage, ErrorCode, FinalPayload, InitPayload, StepPayload, PROTOCOL_VERSION,
};
use super::transport::Channel;
use super::CoordError;
use crate::level1::{L1Instance, L1Params};
use crate::model::InstanceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Level0,
    Level1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Start,
    HelloSent,
    Greeted,
    Ready,
    Stepping(u32),
    Ending,
    Closed,
    Failed,
}

/// Protocol state machine shared by both ends.
#[derive(Debug, Clone)]
pub struct Lockstep {
    state: SessionState,
    continues: u64,
    results: u64,
}

impl Default for Lockstep {
    fn default() -> Self {
        Self {
            state: SessionState::Start,
            continues: 0,
            results: 0,
        }
    }
}

impl Lockstep {
    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn continues_sent(&self) -> u64 {
        self.continues
    }

    pub fn results_received(&self) -> u64 {
        self.results
    }

    /// Validates `msg` sent by `from` and advances the state.
    pub fn observe(&mut self, from: Side, msg: &CoordMessage) -> Result<(), CoordError> {
        use CoordMessage as M;
        use SessionState as S;
        let next = match (self.state, from, msg) {
            (_, Side::Level1, M::Error { code, detail }) => {
                self.state = S::Failed;
                return Err(CoordError::Remote {
                    code: *code,
                    detail: detail.clone(),
                });
            }
            (_, Side::Level0, M::Error { .. }) => S::Failed,
            (S::Start, Side::Level0, M::Hello { .. }) => S::HelloSent,
            (S::HelloSent, Side::Level1, M::Hello { .. }) => S::Greeted,
            (S::Greeted, Side::Level0, M::Init(_)) => S::Ready,
            (S::Ready, Side::Level0, M::Continue { timestep }) => {
                self.continues += 1;
                S::Stepping(*timestep)
            }
            (S::Stepping(t), Side::Level1, M::StepResult(p)) if p.timestep == t => {
                self.results += 1;
                S::Ready
            }
            (S::Ready, Side::Level0, M::End) => S::Ending,
            (S::Ending, Side::Level1, M::Final(_)) => S::Closed,
            (state, from, msg) => {
                self.state = S::Failed;
                return Err(CoordError::ProtocolViolation {
                    state,
                    from,
                    got: msg.kind(),
                });
            }
        };
        self.state = next;
        debug_assert!(self.results <= self.continues);
        Ok(())
    }
}

/// Level-0 side of one session.
pub struct L1Session {
    channel: Channel,
    lockstep: Lockstep,
    instance: InstanceId,
}

impl L1Session {
    /// Performs the version handshake and sends INIT.
    pub fn open(mut channel: Channel, init: InitPayload) -> Result<Self, CoordError> {
        let mut lockstep = Lockstep::default();
        let hello = CoordMessage::Hello {
            version: PROTOCOL_VERSION,
        };
        lockstep.observe(Side::Level0, &hello)?;
        channel.send(&hello)?;
        let reply = channel.recv()?;
        lockstep.observe(Side::Level1, &reply)?;
        if let CoordMessage::Hello { version } = reply {
            if version != PROTOCOL_VERSION {
                let _ = channel.send(&CoordMessage::Error {
                    code: ErrorCode::VersionMismatch,
                    detail: format!("level 0 speaks version {PROTOCOL_VERSION}"),
                });
                return Err(CoordError::VersionMismatch {
                    ours: PROTOCOL_VERSION,
                    theirs: version,
                });
            }
        }
        let instance = init.instance_id;
        let init = CoordMessage::Init(init);
        lockstep.observe(Side::Level0, &init)?;
        channel.send(&init)?;
        debug!("{instance}: session open");
        Ok(Self {
            channel,
            lockstep,
            instance,
        })
    }

    pub fn instance(&self) -> InstanceId {
        self.instance
    }

    pub fn lockstep(&self) -> &Lockstep {
        &self.lockstep
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    /// A peer that hung up may have explained why first; prefer its ERROR
    /// over the bare closed-connection error.
    fn send(&mut self, msg: &CoordMessage) -> Result<(), CoordError> {
        match self.channel.send(msg) {
            Err(CoordError::Closed) => match self.channel.recv() {
                Ok(CoordMessage::Error { code, detail }) => Err(CoordError::Remote { code, detail }),
                _ => Err(CoordError::Closed),
            },
            r => r,
        }
    }

    /// Sends CONTINUE and blocks for the matching STEP_RESULT.
    pub fn step(&mut self, timestep: u32) -> Result<StepPayload, CoordError> {
        let cont = CoordMessage::Continue { timestep };
        self.lockstep.observe(Side::Level0, &cont)?;
        self.send(&cont)?;
        let reply = self.channel.recv()?;
        self.lockstep.observe(Side::Level1, &reply)?;
        match reply {
            CoordMessage::StepResult(p) => Ok(p),
            _ => unreachable!("lockstep admits only STEP_RESULT here"),
        }
    }

    /// Sends END and waits for FINAL. Returns the channel for inspection.
    pub fn end(mut self) -> Result<(FinalPayload, Channel), CoordError> {
        self.lockstep.observe(Side::Level0, &CoordMessage::End)?;
        self.send(&CoordMessage::End)?;
        let reply = self.channel.recv()?;
        self.lockstep.observe(Side::Level1, &reply)?;
        match reply {
            CoordMessage::Final(p) => {
                debug!("{}: session closed", self.instance);
                Ok((p, self.channel))
            }
            _ => unreachable!("lockstep admits only FINAL here"),
        }
    }
}

/// Outcome of a complete scripted session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub steps: Vec<StepPayload>,
    pub last: FinalPayload,
}

/// Runs a whole session: open, one CONTINUE per entry of `timesteps`, END.
pub fn session_run(
    channel: Channel,
    init: InitPayload,
    timesteps: &[u32],
) -> Result<(SessionOutcome, Channel), CoordError> {
    let mut s = L1Session::open(channel, init)?;
    let mut steps = Vec::with_capacity(timesteps.len());
    for &t in timesteps {
        steps.push(s.step(t)?);
    }
    let (last, channel) = s.end()?;
    Ok((SessionOutcome { steps, last }, channel))
}

/// Level-1 side: answers one session until FINAL has been sent.
pub fn serve(
    channel: &mut Channel,
    expected_instance: Option<InstanceId>,
    params: L1Params,
) -> Result<(), CoordError> {
    let mut lockstep = Lockstep::default();
    let mut instance: Option<L1Instance> = None;
    loop {
        let msg = channel.recv()?;
        if let Err(e) = lockstep.observe(Side::Level0, &msg) {
            let _ = channel.send(&CoordMessage::Error {
                code: ErrorCode::ProtocolViolation,
                detail: e.to_string(),
            });
            return Err(e);
        }
        let reply = match msg {
            CoordMessage::Hello { version } if version != PROTOCOL_VERSION => {
                let _ = channel.send(&CoordMessage::Error {
                    code: ErrorCode::VersionMismatch,
                    detail: format!("level 1 speaks version {PROTOCOL_VERSION}, got {version}"),
                });
                return Err(CoordError::VersionMismatch {
                    ours: PROTOCOL_VERSION,
                    theirs: version,
                });
            }
            CoordMessage::Hello { .. } => CoordMessage::Hello {
                version: PROTOCOL_VERSION,
            },
            CoordMessage::Init(init) => {
                let built = match expected_instance {
                    Some(id) if id != init.instance_id => Err(format!(
                        "INIT for {} sent to {id}",
                        init.instance_id
                    )),
                    _ => L1Instance::bootstrap(&init, params).map_err(|e| e.to_string()),
                };
                match built {
                    Ok(inst) => {
                        instance = Some(inst);
                        continue;
                    }
                    Err(detail) => {
                        let _ = channel.send(&CoordMessage::Error {
                            code: ErrorCode::BadInit,
                            detail: detail.clone(),
                        });
                        return Err(CoordError::Level1(detail));
                    }
                }
            }
            CoordMessage::Continue { timestep } => {
                let inst = instance.as_mut().expect("lockstep guarantees INIT first");
                match inst.run_one_coarse_step() {
                    Ok(st) => CoordMessage::StepResult(StepPayload {
                        timestep,
                        entities: st.entities,
                        counters: st.counters,
                    }),
                    Err(e) => {
                        let _ = channel.send(&CoordMessage::Error {
                            code: ErrorCode::SimulationFailure,
                            detail: e.to_string(),
                        });
                        return Err(CoordError::Level1(e.to_string()));
                    }
                }
            }
            CoordMessage::End => {
                let inst = instance.as_ref().expect("lockstep guarantees INIT first");
                let fin = CoordMessage::Final(FinalPayload {
                    entities: inst.records(),
                    counters: inst.totals(),
                });
                lockstep.observe(Side::Level1, &fin)?;
                channel.send(&fin)?;
                return Ok(());
            }
            CoordMessage::Error { .. } => return Err(CoordError::Closed),
            CoordMessage::StepResult(_) | CoordMessage::Final(_) => {
                unreachable!("rejected by lockstep")
            }
        };
        lockstep.observe(Side::Level1, &reply)?;
        channel.send(&reply)?;
    }
}
