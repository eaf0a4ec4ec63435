//! Runs an [`Engine`] on its own thread. Everything else talks to it through
//! channels: commands in, events and state snapshots out.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::Duration;

use korra_core::engine::{Clock, Engine, EngineEvent, Prompt, ResponseSource, StateSnapshot, UserReply, WallClock};
use korra_core::session::SessionStore;
use thiserror::Error;
use tokio::sync::{broadcast, oneshot, watch};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RespondError {
    #[error("no question is waiting for an answer")]
    NoPendingQuestion,
    #[error("answer is for question {got}, but question {expected} is waiting")]
    Stale { expected: u64, got: u64 },
    #[error("`{0}` is not one of the offered answers")]
    UnknownLabel(String),
    #[error("this question does not take free text")]
    FreeTextNotAccepted,
    #[error("the engine has stopped")]
    EngineStopped,
}

#[derive(Debug)]
pub enum Command {
    Respond {
        seq: u64,
        reply: UserReply,
        ack: oneshot::Sender<Result<(), RespondError>>,
    },
    /// Wakes a waiting engine so it can see the stop flag.
    Wake,
}

/// Answers coming from the command channel.
pub struct LiveSource {
    commands: mpsc::Receiver<Command>,
    current: Option<Prompt>,
    stop: Arc<AtomicBool>,
}

impl LiveSource {
    pub fn new(commands: mpsc::Receiver<Command>) -> Self {
        Self::with_stop(commands, Arc::new(AtomicBool::new(false)))
    }

    /// Once `stop` is set, polls give up at once.
    pub fn with_stop(commands: mpsc::Receiver<Command>, stop: Arc<AtomicBool>) -> Self {
        LiveSource {
            commands,
            current: None,
            stop,
        }
    }

    fn reject_queued(&mut self) {
        while let Ok(cmd) = self.commands.try_recv() {
            let Command::Respond { seq, ack, .. } = cmd else { continue };
            let err = match &self.current {
                Some(p) => RespondError::Stale { expected: p.seq, got: seq },
                None => RespondError::NoPendingQuestion,
            };
            let _ = ack.send(Err(err));
        }
    }

    fn check(&self, seq: u64, reply: &UserReply) -> Result<(), RespondError> {
        let prompt = self.current.as_ref().ok_or(RespondError::NoPendingQuestion)?;
        if prompt.seq != seq {
            return Err(RespondError::Stale { expected: prompt.seq, got: seq });
        }
        match reply {
            UserReply::Label(l) if !prompt.options.contains(l) => Err(RespondError::UnknownLabel(l.clone())),
            UserReply::FreeText(_) if !prompt.free_text => Err(RespondError::FreeTextNotAccepted),
            _ => Ok(()),
        }
    }
}

impl ResponseSource for LiveSource {
    fn begin(&mut self, prompt: &Prompt, _at: f64) {
        // Anything queued before the question was asked answers an older one.
        self.current = None;
        self.reject_queued();
        self.current = Some(prompt.clone());
    }

    fn poll_until(&mut self, until: f64, clock: &mut dyn Clock) -> Option<(f64, UserReply)> {
        loop {
            if self.stop.load(Ordering::Relaxed) {
                clock.wait_until(until);
                return None;
            }
            let wait = until - clock.now();
            if wait <= 0.0 {
                return None;
            }
            match self.commands.recv_timeout(Duration::from_secs_f64(wait)) {
                Ok(Command::Respond { seq, reply, ack }) => match self.check(seq, &reply) {
                    Ok(()) => {
                        let _ = ack.send(Ok(()));
                        return Some((clock.now().min(until), reply));
                    }
                    Err(e) => {
                        let _ = ack.send(Err(e));
                    }
                },
                Ok(Command::Wake) => {}
                Err(mpsc::RecvTimeoutError::Timeout) => return None,
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    clock.wait_until(until);
                    return None;
                }
            }
        }
    }

    fn end(&mut self) {
        self.current = None;
        self.reject_queued();
    }
}

/// Wall clock that stops sleeping once the stop flag is set. From then on
/// waits complete instantly, so the step in progress runs to its end
/// without blocking shutdown.
struct StoppableClock {
    wall: WallClock,
    skipped: f64,
    stop: Arc<AtomicBool>,
}

impl Clock for StoppableClock {
    fn now(&self) -> f64 {
        self.wall.now() + self.skipped
    }

    fn wait_until(&mut self, t: f64) {
        if self.stop.load(Ordering::Relaxed) {
            self.skipped += (t - self.now()).max(0.0);
        } else {
            self.wall.wait_until(t - self.skipped);
        }
    }
}

/// Channels for talking to a running engine.
#[derive(Clone)]
pub struct EngineHandle {
    pub commands: mpsc::Sender<Command>,
    pub events: broadcast::Sender<EngineEvent>,
    pub state: watch::Receiver<StateSnapshot>,
}

impl EngineHandle {
    /// Sends an answer and waits for the engine to accept or reject it.
    pub async fn respond(&self, seq: u64, reply: UserReply) -> Result<(), RespondError> {
        let (ack, rx) = oneshot::channel();
        self.commands
            .send(Command::Respond { seq, reply, ack })
            .map_err(|_| RespondError::EngineStopped)?;
        rx.await.unwrap_or(Err(RespondError::EngineStopped))
    }
}

/// A spawned engine thread.
pub struct RunningEngine {
    pub handle: EngineHandle,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<(), String>>>,
}

impl RunningEngine {
    /// Asks the loop to stop after the current step and waits for it.
    pub fn stop(mut self) -> Result<(), String> {
        self.stop.store(true, Ordering::Relaxed);
        let _ = self.handle.commands.send(Command::Wake);
        self.join_inner()
    }

    /// Waits for the session to end on its own.
    pub fn join(mut self) -> Result<(), String> {
        self.join_inner()
    }

    fn join_inner(&mut self) -> Result<(), String> {
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| "engine thread panicked".to_owned())?,
            None => Ok(()),
        }
    }
}

impl Drop for RunningEngine {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        let _ = self.handle.commands.send(Command::Wake);
    }
}

/// Starts the engine loop on a wall clock. With a store, the session state
/// is persisted after every step.
pub fn spawn(mut engine: Engine, store: Option<SessionStore>) -> RunningEngine {
    let (cmd_tx, cmd_rx) = mpsc::channel();
    let (events_tx, _) = broadcast::channel(1024);
    let (state_tx, state_rx) = watch::channel(engine.snapshot());

    let observer_tx = events_tx.clone();
    engine.add_observer(move |e| {
        let _ = observer_tx.send(e.clone());
    });
    engine.set_snapshot_sink(move |s| {
        state_tx.send_replace(s);
    });

    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let thread = std::thread::Builder::new()
        .name("korra-engine".into())
        .spawn(move || {
            let mut clock = StoppableClock {
                wall: WallClock::new(),
                skipped: 0.0,
                stop: Arc::clone(&stop_flag),
            };
            let mut source = LiveSource::with_stop(cmd_rx, Arc::clone(&stop_flag));
            while !engine.is_finished() && !stop_flag.load(Ordering::Relaxed) {
                engine.run_step(&mut clock, &mut source).map_err(|e| e.to_string())?;
                if let Some(store) = &store {
                    store.persist(engine.session()).map_err(|e| e.to_string())?;
                }
            }
            engine.finish("stopped").map_err(|e| e.to_string())?;
            if let Some(store) = &store {
                store.persist(engine.session()).map_err(|e| e.to_string())?;
            }
            Ok(())
        })
        .expect("engine thread starts");

    RunningEngine {
        handle: EngineHandle {
            commands: cmd_tx,
            events: events_tx,
            state: state_rx,
        },
        stop,
        thread: Some(thread),
    }
}
