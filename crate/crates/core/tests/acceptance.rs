//! Acceptance suite. One PASS/FAIL line per criterion; exits non-zero if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use korra_core::bayes::{joke_telling_rate, tell_joke_prob, BayesNet, BinaryNode, ObservationSet};
use korra_core::engine::{
    simulate, replay_script, Clock, Engine, EventKind, Prompt, ResponseSource, SimConfig, UserPolicy, UserReply,
    VirtualClock,
};
use korra_core::model::{AgentModel, Interaction, ModelError, SelectionPolicy};
use korra_core::prob::RngStream;
use korra_core::scheduler::{
    effective_distribution, generate_queue, select_within_category, CategoryCursor, CategoryWeights,
    InteractionsQueue, Phase, QueueItem, SelectionState,
};
use korra_core::session::{LogKind, SessionLog, SessionState};
use korra_core::stats::{compute_fit, FitInput, FitTerm};
use korra_core::timing::{sample_interval, IntervalKind, TimingParams};
use korra_core::triggers::{on_response, TriggerEffect, UpdateEffect};
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "joke-model", budget: Some(Duration::from_secs(1)), run: joke_model },
        Criterion { name: "inference-oracle", budget: Some(Duration::from_secs(10)), run: inference_oracle },
        Criterion { name: "main-distribution-adherence", budget: Some(Duration::from_secs(5)), run: distribution_adherence },
        Criterion { name: "fixed-category-preservation", budget: None, run: fixed_preservation },
        Criterion { name: "within-category-selection", budget: None, run: within_category },
        Criterion { name: "fit", budget: None, run: fit },
        Criterion { name: "timing", budget: Some(Duration::from_secs(5)), run: timing },
        Criterion { name: "triggers", budget: None, run: triggers },
        Criterion { name: "determinism", budget: None, run: determinism },
        Criterion { name: "soak", budget: Some(Duration::from_secs(120)), run: soak },
        Criterion { name: "log-format", budget: None, run: log_format },
    ];

    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {:<30} {:>9.2?}  {detail}", c.name, elapsed),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:<30} {:>9.2?}  {detail}", c.name, elapsed);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn joke_model() -> Outcome {
    let table = [((true, true), 0.4), ((true, false), 0.9), ((false, true), 0.2), ((false, false), 0.2)];
    for ((likes, mood), want) in table {
        let got = tell_joke_prob(likes, mood);
        ensure!((got - want).abs() <= 1e-12, "({likes},{mood}) gave {got}, want {want}");
    }
    // Oracle: all eight (likes, mood, tells) outcomes.
    let (pl, pm) = (0.8, 0.6);
    let mut oracle = 0.0;
    for likes in [false, true] {
        for mood in [false, true] {
            for tells in [false, true] {
                let p_tell = tell_joke_prob(likes, mood);
                let p = (if likes { pl } else { 1.0 - pl })
                    * (if mood { pm } else { 1.0 - pm })
                    * (if tells { p_tell } else { 1.0 - p_tell });
                if tells {
                    oracle += p;
                }
            }
        }
    }
    let got = joke_telling_rate(pl, pm).map_err(|e| e.to_string())?.weight_of(&true);
    ensure!((got - oracle).abs() <= 1e-12, "rate {got}, oracle {oracle}");
    ensure!((got - 0.52).abs() <= 1e-12, "rate {got}, want 0.52");
    Ok(format!("rate={got:.12}"))
}

fn random_net(rng: &mut rand_chacha::ChaCha8Rng) -> Vec<BinaryNode> {
    let n = rng.random_range(1..=5);
    (0..n)
        .map(|i| {
            let parents: Vec<String> = (0..i)
                .filter(|_| rng.random_bool(0.5))
                .take(3)
                .map(|j| format!("N{j}"))
                .collect();
            let cpt = (0..1usize << parents.len()).map(|_| rng.random_range(0.05..0.95)).collect();
            BinaryNode {
                name: format!("N{i}"),
                parents,
                cpt,
            }
        })
        .collect()
}

/// Brute-force joint: every assignment, product of CPT rows (first parent
/// is the most significant bit of the row index).
fn oracle_joint(nodes: &[BinaryNode]) -> Vec<(Vec<bool>, f64)> {
    let n = nodes.len();
    let pos = |name: &str| nodes.iter().position(|m| m.name == name).unwrap();
    (0..1usize << n)
        .map(|bits| {
            let a: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let p = nodes
                .iter()
                .enumerate()
                .map(|(i, node)| {
                    let row = node.parents.iter().fold(0, |acc, par| acc * 2 + usize::from(a[pos(par)]));
                    if a[i] { node.cpt[row] } else { 1.0 - node.cpt[row] }
                })
                .product();
            (a, p)
        })
        .collect()
}

fn inference_oracle() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut checks = 0;
    for case in 0..50 {
        let mut nodes = random_net(&mut rng);
        // Reverse declaration order; the net must sort it.
        let mut shuffled = nodes.clone();
        shuffled.reverse();
        let net = BayesNet::new(shuffled).map_err(|e| e.to_string())?;
        nodes.sort_by_key(|n| n.name[1..].parse::<usize>().unwrap());
        let joint = oracle_joint(&nodes);
        let n = nodes.len();
        let mut obs = ObservationSet::new();
        let mut observed = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            if rng.random_bool(0.4) {
                let v = rng.random_bool(0.5);
                obs.insert(&node.name, v);
                observed.push((i, v));
            }
        }
        let matches = |a: &[bool]| observed.iter().all(|&(i, v)| a[i] == v);
        let poe: f64 = joint.iter().filter(|(a, _)| matches(a)).map(|(_, p)| p).sum();

        let contradiction = net.contradiction_score(&obs).map_err(|e| e.to_string())?;
        ensure!((contradiction - (1.0 - poe)).abs() <= 1e-9, "case {case}: contradiction {contradiction} vs {}", 1.0 - poe);
        checks += 1;

        for t in (0..n).filter(|t| !observed.iter().any(|(i, _)| i == t)) {
            let num: f64 = joint.iter().filter(|(a, _)| matches(a) && a[t]).map(|(_, p)| p).sum();
            let want = num / poe;
            let name = &nodes[t].name;
            let fwd = net.forward_marginal(name, &obs).map_err(|e| e.to_string())?.weight_of(&true);
            let post = net.posterior(name, &obs).map_err(|e| e.to_string())?.weight_of(&true);
            ensure!((fwd - want).abs() <= 1e-9, "case {case} {name}: forward {fwd} vs {want}");
            ensure!((post - want).abs() <= 1e-9, "case {case} {name}: posterior {post} vs {want}");
            checks += 2;
        }
    }
    Ok(format!("{checks} queries on 50 nets"))
}

fn distribution_adherence() -> Outcome {
    let listing = [
        ("MakeSuggestion", 0.375),
        ("AskUncertainFactQuestion", 0.00791),
        ("AskPureFactQuestionAboutUser", 0.277),
        ("SharePureFactInfoAboutBot", 0.316),
        ("ChangeVisualAppearance", 0.0119),
        ("ExpressMentalState", 0.0119),
    ];
    let model = AgentModel::demo();
    let weights = CategoryWeights::from_model(&model);
    let (dist, _) = effective_distribution(&weights, &BTreeSet::new()).map_err(|e| e.to_string())?;
    let mut rng = RngStream::new(99, "content");
    let n = 10_000;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..n {
        *counts.entry(dist.dist().sample(&mut rng)).or_default() += 1;
    }
    let mut worst = 0.0f64;
    for (cat, want) in listing {
        let got = counts.get(cat).copied().unwrap_or(0) as f64 / n as f64;
        let err = (got - want).abs();
        worst = worst.max(err);
        ensure!(err <= 0.015, "{cat}: {:.3}% vs {:.3}%", got * 100.0, want * 100.0);
    }
    ensure!(!counts.contains_key("MakeJoke"), "zero-weight category was drawn");
    Ok(format!("max deviation {:.3} points", worst * 100.0))
}

fn fixed_preservation() -> Outcome {
    let weights = CategoryWeights::new([("A", 0.3), ("B", 0.4), ("C", 0.3)], ["A"]);
    let depleted: BTreeSet<String> = ["C".to_owned()].into();
    let (dist, _) = effective_distribution(&weights, &depleted).map_err(|e| e.to_string())?;
    let (a, b, c) = (dist.weight("A"), dist.weight("B"), dist.weight("C"));
    ensure!(a == 0.3, "A = {a}, want exactly 0.3");
    ensure!((b - 0.7).abs() <= 1e-9, "B = {b}");
    ensure!(c == 0.0, "C = {c}");
    Ok(format!("A={a} B={b}"))
}

fn repeatable_items(n: usize) -> Vec<Interaction> {
    (0..n)
        .map(|i| {
            serde_json::from_value(serde_json::json!({
                "id": format!("i{i}"), "category": "X", "kind": "appearance_change", "text": "x"
            }))
            .unwrap()
        })
        .collect()
}

fn within_category() -> Outcome {
    let mut runs = 0;
    for seed in 0..100u64 {
        for size in 2..=20usize {
            let items = repeatable_items(size);
            let refs: Vec<&Interaction> = items.iter().collect();
            let mut rng = RngStream::new(seed, "content");
            let mut cursor = CategoryCursor::new(SelectionPolicy::PermutationThenUniform);
            let mut seen = BTreeSet::new();
            let mut last: Option<String> = None;
            for k in 0..size {
                let id = select_within_category(&mut cursor, &refs, |_| true, &mut rng).ok_or("depleted")?;
                ensure!(cursor.phase == Phase::Permutation, "seed {seed} size {size}: left permutation at {k}");
                ensure!(seen.insert(id.clone()), "seed {seed} size {size}: repeat {id} in permutation");
                last = Some(id);
            }
            for _ in 0..3 * size {
                let id = select_within_category(&mut cursor, &refs, |_| true, &mut rng).ok_or("depleted")?;
                ensure!(cursor.phase == Phase::Uniform, "seed {seed} size {size}: not in uniform phase");
                ensure!(last.as_deref() != Some(id.as_str()), "seed {seed} size {size}: immediate repeat {id}");
                last = Some(id);
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} sweeps"))
}

fn fit() -> Outcome {
    let worked = FitInput {
        terms: vec![
            FitTerm { avg_time: 4.0, pause: 3.7, count: 3 },
            FitTerm { avg_time: 6.0, pause: 3.7, count: 2 },
        ],
    };
    let got = compute_fit(&worked);
    ensure!((got - 42.5).abs() <= 1e-12, "worked example gave {got}");
    // Dyadic inputs keep every partial sum exact, so the oracle (one
    // addition per interaction) must agree bit for bit.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let terms: Vec<FitTerm> = (0..rng.random_range(0..8))
            .map(|_| FitTerm {
                avg_time: rng.random_range(0..400) as f64 / 16.0,
                pause: rng.random_range(0..100) as f64 / 16.0,
                count: rng.random_range(0..20),
            })
            .collect();
        let mut oracle = 0.0;
        for t in &terms {
            for _ in 0..t.count {
                oracle += t.avg_time + t.pause;
            }
        }
        let got = compute_fit(&FitInput { terms });
        ensure!(got == oracle, "case {case}: {got} vs {oracle}");
    }
    Ok("worked example 42.5, 100 random inputs exact".into())
}

fn timing() -> Outcome {
    let params = TimingParams::default();
    let cases = [
        (IntervalKind::Smile, 12.0, 0.1, 3.0, 0.3),
        (IntervalKind::GazeHold, 7.0, 0.1, 1.2, 0.15),
        (IntervalKind::PauseNew, 3.7, 0.05, 0.25, 0.05),
    ];
    let mut detail = Vec::new();
    for (kind, mean, mean_tol, var, var_tol) in cases {
        let mut rng = RngStream::new(31, "timing");
        let xs: Vec<f64> = (0..10_000).map(|_| sample_interval(kind, &params, &mut rng)).collect();
        ensure!(xs.iter().all(|&x| x >= params.floor), "{kind:?}: draw below floor");
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        ensure!((m - mean).abs() <= mean_tol, "{kind:?}: mean {m}");
        ensure!((v - var).abs() <= var_tol, "{kind:?}: variance {v}");
        detail.push(format!("{kind:?} {m:.3}/{v:.3}"));
    }
    Ok(detail.join(", "))
}

/// Answers by interaction id after a two second delay; silent otherwise.
struct ById {
    answers: BTreeMap<&'static str, &'static str>,
    pending: Option<(f64, UserReply)>,
}

impl ResponseSource for ById {
    fn begin(&mut self, prompt: &Prompt, at: f64) {
        self.pending = self.answers.get(prompt.interaction_id.as_str()).map(|label| {
            let reply = if prompt.options.is_empty() {
                UserReply::FreeText((*label).to_owned())
            } else {
                UserReply::Label((*label).to_owned())
            };
            (at + 2.0, reply)
        });
    }

    fn poll_until(&mut self, until: f64, clock: &mut dyn Clock) -> Option<(f64, UserReply)> {
        match &self.pending {
            Some((at, _)) if *at <= until => {
                clock.wait_until(*at);
                self.pending.take()
            }
            _ => {
                clock.wait_until(until);
                None
            }
        }
    }

    fn end(&mut self) {
        self.pending = None;
    }
}

fn triggers() -> Outcome {
    let model = Arc::new(AgentModel::demo());

    // Movie update trigger at the component level: exact halving of the
    // pre-normalization weight, executed prefix untouched.
    let mut weights = CategoryWeights::from_model(&model);
    let before = weights.get("MakeSuggestion").unwrap();
    let mut session = SessionState::fresh(&model, 1, 0.0);
    session.user_facts.insert(
        "ask_movie_today".into(),
        korra_core::session::UserFact {
            label: Some("Yes".into()),
            text: "Yes".into(),
            polarity: Some(korra_core::model::Polarity::Positive),
            number: None,
            at: 0.0,
        },
    );
    let firings = on_response(&model, &mut session, "ask_movie_today");
    ensure!(firings.len() == 1, "movie trigger fired {} times", firings.len());
    let mut resample = false;
    for effect in &firings[0].effects {
        match effect {
            TriggerEffect::Update(UpdateEffect::DistributionEdit(edit)) => {
                weights.apply(edit).map_err(|e| e.to_string())?;
            }
            TriggerEffect::Update(UpdateEffect::ResampleRequest) => resample = true,
            other => return Err(format!("unexpected effect {other:?}")),
        }
    }
    let after = weights.get("MakeSuggestion").unwrap();
    ensure!(after == before * 0.5, "MakeSuggestion {before} -> {after}");
    ensure!(resample, "no resample requested");

    let mut selection = SelectionState::default();
    let mut rng = RngStream::new(4, "content");
    let first = generate_queue(&model, &mut session, &mut selection, &CategoryWeights::from_model(&model), 9, &mut rng);
    let mut queue = InteractionsQueue::from_items(first.items);
    for _ in 0..4 {
        queue.take_next();
    }
    let executed: Vec<QueueItem> = queue.executed().to_vec();
    let removed = queue.discard_suffix();
    selection.release(&removed);
    let batch = generate_queue(&model, &mut session, &mut selection, &weights, 5, &mut rng);
    queue.extend(batch.items);
    ensure!(queue.executed() == executed.as_slice(), "executed prefix changed");
    ensure!(queue.cursor() == 4, "cursor moved");
    ensure!(!removed.is_empty(), "nothing was discarded");

    // The same trigger inside the engine.
    let answers = BTreeMap::from([("ask_movie_today", "Yes")]);
    let (engine, _) = run_until(&model, 17, answers, "movie_watched")?;
    let w = engine.weights().get("MakeSuggestion").unwrap();
    ensure!(w == before * 0.5, "engine weight {w}");

    // Surprise evaluate trigger: injected at the queue head with a cue.
    let answers = BTreeMap::from([("ask_age", "Under 30"), ("ask_twitch", "Yes"), ("ask_likes_games", "No")]);
    let (engine, events) = run_until(&model, 5, answers, "surprise")?;
    let head = engine.queue().pending().first().cloned();
    ensure!(
        matches!(&head, Some(QueueItem::Injected(inj)) if inj.id.starts_with("surprise#")),
        "queue head is {head:?}"
    );
    let cue = events.iter().any(|k| matches!(k, EventKind::Nonverbal { cue: korra_core::engine::Cue::SurpriseFace }));
    ensure!(cue, "no surprise cue");

    // Capability violations do not load.
    let base = serde_json::json!({
        "name": "m",
        "categories": [{"name": "A", "base_weight": 1.0}],
        "interactions": [{"id": "q", "category": "A", "kind": "pure_fact_about_user", "text": "Q?",
            "responses": [{"label": "Yes", "polarity": "positive"}, {"label": "No", "polarity": "negative"}]}],
        "nets": [{"name": "n", "nodes": [{"name": "X", "cpt": [0.5]}]}]
    });
    let bad = [
        serde_json::json!({"type": "update", "id": "u", "watch": {"fact": "q"}, "edits": [],
            "inject": {"category": "A", "text": "x"}}),
        serde_json::json!({"type": "evaluate", "id": "e", "net": "n", "bindings": [{"fact": "q", "node": "X"}],
            "inject": {"category": "A", "text": "x"}, "resample": true}),
        serde_json::json!({"type": "evaluate", "id": "e", "net": "n", "bindings": [{"fact": "q", "node": "X"}],
            "inject": {"category": "A", "text": "x"}, "edits": [{"category": "A", "multiply": 2.0}]}),
        serde_json::json!({"type": "evaluate", "id": "e", "net": "n", "bindings": [{"fact": "q", "node": "X"}],
            "inject": {"category": "A", "text": "x"}, "watch": {"after_seconds": 5}}),
    ];
    for t in bad {
        let mut doc = base.clone();
        doc["triggers"] = serde_json::json!([t]);
        match AgentModel::load(&doc.to_string()) {
            Err(ModelError::Capability { .. }) => {}
            other => return Err(format!("capability violation accepted: {other:?}")),
        }
    }
    Ok("movie halves weight and keeps prefix; surprise injected at head; 4 violations rejected".into())
}

/// Runs the demo until `trigger` fires, then returns the engine as it is
/// right after that step, with the event kinds of the step.
fn run_until(
    model: &Arc<AgentModel>,
    seed: u64,
    answers: BTreeMap<&'static str, &'static str>,
    trigger: &str,
) -> Result<(Engine, Vec<EventKind>), String> {
    let session = SessionState::fresh(model, seed, 0.0);
    let mut engine = Engine::new(model.clone(), session, SessionLog::new(seed, "t")).map_err(|e| e.to_string())?;
    let mut clock = VirtualClock::new();
    let mut source = ById { answers, pending: None };
    while engine.now() < 4.0 * 3600.0 && !engine.is_finished() {
        let events = engine.run_step(&mut clock, &mut source).map_err(|e| e.to_string())?;
        if events.iter().any(|e| matches!(&e.kind, EventKind::TriggerFired { trigger: t, .. } if t == trigger)) {
            return Ok((engine, events.into_iter().map(|e| e.kind).collect()));
        }
    }
    Err(format!("{trigger} never fired"))
}

fn determinism() -> Outcome {
    let model = Arc::new(AgentModel::demo());
    let run = |policy: UserPolicy| simulate(model.clone(), policy, SimConfig::new(3600.0, 77)).map_err(|e| e.to_string());
    let (a, _) = run(UserPolicy::UniformRandom)?;
    let (b, _) = run(UserPolicy::UniformRandom)?;
    ensure!(a.body_text() == b.body_text(), "same seed, different logs");

    let script = replay_script(a.events());
    let (c, _) = run(UserPolicy::Scripted(script.clone()))?;
    ensure!(c.body_text() == a.body_text(), "replay diverged");

    let parsed = korra_core::session::parse_log(&a.text()).map_err(|e| e.to_string())?;
    ensure!(replay_script(&parsed) == script, "script from parsed text differs");
    Ok(format!("{} events, {} replies replayed", a.events().len(), script.len()))
}

fn soak() -> Outcome {
    let model = Arc::new(AgentModel::demo());
    let handles: Vec<_> = [UserPolicy::AlwaysPositive, UserPolicy::Silent]
        .into_iter()
        .map(|policy| {
            let model = model.clone();
            std::thread::spawn(move || {
                let name = format!("{policy:?}");
                let cfg = SimConfig::new(4.0 * 3600.0, 2026).with_speed(1000.0);
                simulate(model, policy, cfg).map(|(_, r)| (name, r)).map_err(|e| e.to_string())
            })
        })
        .collect();
    let timing = model.timing();
    // After a timeout the next utterance follows one new-interaction pause.
    let gap_bound = timing.pause_new.mean + 6.0 * timing.pause_new.std_dev();
    let mut detail = Vec::new();
    for h in handles {
        let (name, report) = h.join().map_err(|_| "soak thread panicked".to_owned())??;
        let c = &report.counters;
        ensure!(!report.finished_early, "{name}: session ended early");
        ensure!(report.ended_at >= report.duration_s, "{name}: stopped at {}", report.ended_at);
        ensure!(c.peak_queue_len <= report.queue_max, "{name}: queue reached {}", c.peak_queue_len);
        ensure!(c.max_gap_after_timeout <= gap_bound, "{name}: stalled {}s after a timeout", c.max_gap_after_timeout);
        if name == "Silent" {
            ensure!(c.timeouts > 0 && c.timeouts == c.questions, "{name}: {} timeouts of {}", c.timeouts, c.questions);
        }
        detail.push(format!("{name}: {} executed, peak queue {}", c.executed, c.peak_queue_len));
    }
    Ok(detail.join("; "))
}

fn log_format() -> Outcome {
    let model = Arc::new(AgentModel::demo());
    let (log, _) = simulate(model, UserPolicy::AlwaysPositive, SimConfig::new(60.0, 3)).map_err(|e| e.to_string())?;
    let events = log.events();
    let hist = events.iter().find(|e| e.kind == LogKind::Histogram).ok_or("no histogram")?;
    let queue = events.iter().find(|e| e.kind == LogKind::QueueSnapshot).ok_or("no queue")?;

    let mut lines = hist.payload.lines();
    ensure!(lines.next() == Some("***** BEGIN Regenerating interactions *****"), "banner missing");
    ensure!(lines.next() == Some("Histogram:"), "histogram title missing");
    for line in lines {
        let (label, rest) = line.split_once(' ').ok_or(format!("bad line {line:?}"))?;
        let (pct, bar) = rest.split_once("% ").ok_or(format!("bad line {line:?}"))?;
        ensure!(!label.is_empty() && pct.parse::<f64>().is_ok(), "bad line {line:?}");
        ensure!(!bar.is_empty() && bar.chars().all(|c| c == '#'), "bad bar {line:?}");
    }
    let mut lines = queue.payload.lines();
    ensure!(lines.next() == Some("Interactions queue:"), "queue title missing");
    for (i, line) in lines.enumerate() {
        ensure!(line.starts_with(&format!("{}. ", i + 1)), "bad queue line {line:?}");
    }

    let block = format!("{}\n{}\n", hist.payload, queue.payload);
    let golden_path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/first_regeneration.txt");
    let golden = std::fs::read_to_string(golden_path).map_err(|e| format!("{golden_path}: {e}"))?;
    ensure!(block == golden, "output differs from golden file:\n{block}");
    Ok("histogram and queue blocks match golden".into())
}
