use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use korra::runtime::{self, EngineHandle};
use korra::summary::summarize;
use korra_core::engine::{parse_script, simulate, wall_clock_stamp, Engine, EngineEvent, EventKind, SimConfig, UserPolicy, UserReply};
use korra_core::model::AgentModel;
use korra_core::prob::RngStream;
use korra_core::session::{parse_log, startup, SessionLog, SessionStore};

#[derive(Parser)]
#[command(name = "korra", version, about = "Behavior engine for proactive conversational agents")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a live session, answering from the terminal or over HTTP.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Directory holding the persistent user state and session logs.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Serve the HTTP API on this port instead of reading stdin.
        #[arg(long)]
        serve: Option<u16>,
    },
    /// Run a session against a simulated user on a virtual clock.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// `always_positive`, `uniform_random`, `silent`, or a script file.
        #[arg(long)]
        policy: String,
        /// Virtual seconds to run.
        #[arg(long)]
        duration: f64,
        /// Virtual seconds per wall-clock second; `inf` runs unpaced.
        #[arg(long, default_value = "inf")]
        speed: f64,
        #[arg(long)]
        seed: u64,
        /// Write the session log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Summarize a session log.
    Stats {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Cmd::Run { model, seed, store, serve } => run(&model, seed, store, serve),
        Cmd::Simulate {
            model,
            policy,
            duration,
            speed,
            seed,
            log,
        } => {
            let model = load_model(&model)?;
            let policy = load_policy(&policy)?;
            let config = SimConfig::new(duration, seed).with_speed(speed);
            let (session_log, report) = simulate(model, policy, config)?;
            if let Some(path) = log {
                std::fs::write(&path, session_log.text()).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Stats { log, json } => {
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let summary = summarize(&parse_log(&text)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{summary}");
            }
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> Result<Arc<AgentModel>> {
    Ok(Arc::new(AgentModel::load_file(path)?))
}

fn load_policy(spec: &str) -> Result<UserPolicy> {
    if let Some(p) = UserPolicy::by_name(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        bail!("unknown policy `{spec}`: expected always_positive, uniform_random, silent or a script file");
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
    Ok(UserPolicy::Scripted(parse_script(&text)?))
}

fn run(model_path: &Path, seed: u64, store: Option<PathBuf>, serve: Option<u16>) -> Result<()> {
    let model = load_model(model_path)?;
    let now_unix = SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs_f64();
    let store = store.map(SessionStore::new);
    let stored = match &store {
        Some(s) => {
            std::fs::create_dir_all(s.dir())?;
            s.load()?
        }
        None => None,
    };
    let mut rng = RngStream::new(seed, "forget");
    let (state, report) = startup(&model, stored, seed, now_unix, &mut rng);
    if !report.forgotten.is_empty() {
        eprintln!("forgotten since last session: {}", report.forgotten.join(", "));
    }
    let log = SessionLog::new(seed, &wall_clock_stamp());
    let log = match &store {
        Some(s) => {
            let path = s.log_path(now_unix);
            eprintln!("logging to {}", path.display());
            log.with_file(&path, false)?
        }
        None => log,
    };
    let engine = Engine::new(model, state, log)?;
    let running = runtime::spawn(engine, store);
    let handle = running.handle.clone();

    match serve {
        Some(port) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
                eprintln!("serving on http://{}", listener.local_addr()?);
                axum::serve(listener, korra::server::router(handle)).await?;
                anyhow::Ok(())
            })?;
        }
        None => console(handle),
    }
    running.join().map_err(anyhow::Error::msg)
}

/// Prints what the agent says and forwards typed lines as answers. A number
/// picks an option; anything else is sent as free text.
fn console(handle: EngineHandle) {
    let mut events = handle.events.subscribe();
    std::thread::spawn(move || {
        while let Ok(e) = events.blocking_recv() {
            print_event(&e);
            if matches!(e.kind, EventKind::SessionEnd { .. }) {
                break;
            }
        }
    });
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        let line = line.trim().to_owned();
        if line.is_empty() {
            continue;
        }
        let Some(prompt) = handle.state.borrow().pending_question.clone() else {
            eprintln!("(nothing to answer right now)");
            continue;
        };
        let reply = match line.parse::<usize>() {
            Ok(n) if (1..=prompt.options.len()).contains(&n) => UserReply::Label(prompt.options[n - 1].clone()),
            _ => UserReply::FreeText(line),
        };
        let (ack, rx) = tokio::sync::oneshot::channel();
        if handle
            .commands
            .send(runtime::Command::Respond { seq: prompt.seq, reply, ack })
            .is_err()
        {
            break;
        }
        if let Ok(Err(e)) = rx.blocking_recv() {
            eprintln!("({e})");
        }
    }
}

fn print_event(e: &EngineEvent) {
    match &e.kind {
        EventKind::Utterance { text, .. } => println!("[{:8.1}] agent: {text}", e.at),
        EventKind::AwaitingResponse(p) => {
            let options: Vec<String> = p.options.iter().enumerate().map(|(i, o)| format!("{}) {o}", i + 1)).collect();
            println!("           {}", options.join("  "));
        }
        EventKind::Timeout { .. } => println!("[{:8.1}] (no answer)", e.at),
        EventKind::Nonverbal { cue } => println!("[{:8.1}] *{}*", e.at, cue.as_str()),
        EventKind::SessionEnd { reason } => println!("[{:8.1}] session ended: {reason}", e.at),
        _ => {}
    }
}
