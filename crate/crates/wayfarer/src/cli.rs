//! Command-line interface.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use wayfarer_core::agent::{run_session, Adapters, SessionConfig, SessionTrace, TRACE_FORMAT_VERSION};
use wayfarer_core::dataset::{
    build_dataset, composition_report, split_dataset, BuildConfig, Fact, KeyedFieldChecker, ReferenceGenerator,
    SplitAssignment, DEFAULT_QUESTIONS_PER_FACT, DEFAULT_TRAIN_RATIO,
};
use wayfarer_core::mcq::{
    build_mcq, improvement_delta, published, resolve_predictions, round_half_up, score_run, DistractorPool, Matcher,
    McqItem, Prediction, WeightsMode,
};
use wayfarer_core::model::{CotRecord, QaPair, Split, RECORD_FORMAT_VERSION};
use wayfarer_core::plan::{feasible, solve, PlanInstance};
use wayfarer_core::stats::check_published_columns;

use crate::config::{parse_weights, Beam, RunConfig};
use crate::fixtures::{load_city, load_pois};
use crate::io::{read_json, read_jsonl, read_jsonl_opt, require_dir, require_file, write_atomic, write_json, write_jsonl};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

pub fn version() -> String {
    format!(
        "{} (record format v{RECORD_FORMAT_VERSION}, trace format v{TRACE_FORMAT_VERSION})",
        env!("CARGO_PKG_VERSION")
    )
}

#[derive(Debug, Parser)]
#[command(name = "wayfarer", about = "Travel QA dataset, benchmark and itinerary planning tools")]
pub struct Cli {
    /// TOML run configuration; command flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitFilter {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a place file and rewrite it in canonical id order.
    Ingest {
        #[arg(long)]
        pois: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand facts into QA pairs, verify, split and report.
    BuildDataset {
        #[arg(long)]
        pois: PathBuf,
        #[arg(long)]
        facts: PathBuf,
        /// Annotated reasoning records to carry into the dataset.
        #[arg(long)]
        cot: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_QUESTIONS_PER_FACT)]
        questions_per_fact: usize,
        /// Number of practical-constraint pairs to add.
        #[arg(long, default_value_t = 0)]
        augmented: usize,
        #[arg(long, default_value_t = DEFAULT_TRAIN_RATIO)]
        ratio: f64,
    },
    /// Re-split a built dataset into a new directory.
    Split {
        #[arg(long, value_name = "DIR")]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TRAIN_RATIO)]
        ratio: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Composition table and counting identities of a built dataset.
    Report {
        #[arg(long, value_name = "DIR")]
        dir: Option<PathBuf>,
        /// Defaults to the value recorded at build time.
        #[arg(long)]
        questions_per_fact: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn QA pairs into four-option multiple-choice items.
    ConvertMcq {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        pois: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitFilter,
    },
    /// Score a prediction transcript against multiple-choice items.
    Evaluate {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `from-counts` or an explicit text weight in [0, 1].
        #[arg(long, value_parser = parse_weights)]
        weights: Option<WeightsMode>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Append the arithmetic checks of the published score table.
        #[arg(long)]
        published: bool,
    },
    /// Solve one planning instance.
    Plan {
        #[arg(long)]
        instance: PathBuf,
        /// Beam width, or `unbounded` for the exact search.
        #[arg(long)]
        beam: Option<Beam>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one agent session against a city fixture.
    PlanSession {
        #[arg(long)]
        query: String,
        /// Image descriptor: a file name or uri known to the fixture.
        #[arg(long)]
        image: Option<String>,
        #[arg(long, value_name = "DIR")]
        city_fixture: Option<PathBuf>,
        /// Where to write the session trace.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        beam: Option<Beam>,
        #[arg(long)]
        max_steps: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve planning sessions over HTTP.
    Serve {
        #[arg(long, value_name = "DIR")]
        fixtures: Option<PathBuf>,
        #[arg(long, env = "WAYFARER_BIND", default_value = DEFAULT_BIND)]
        bind: SocketAddr,
        #[arg(long)]
        beam: Option<Beam>,
    },
    /// Usability questionnaire statistics.
    SusScore {
        #[arg(long)]
        responses: PathBuf,
        /// Column naming each row's group (default: `system` if present).
        #[arg(long)]
        group_by: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append the column-sum check of the published questionnaire table.
        #[arg(long)]
        published: bool,
    },
}

/// Refuses to write any output over an input file.
fn guard_outputs(inputs: &[&Path], outputs: &[PathBuf]) -> Result<()> {
    for out in outputs {
        let Ok(o) = out.canonicalize() else { continue };
        for input in inputs {
            if input.canonicalize().is_ok_and(|i| i == o) {
                bail!("refusing to overwrite input {}", input.display());
            }
        }
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    print!("{text}");
    if let Some(p) = out {
        write_atomic(p, text.as_bytes())?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Ingest { pois, out } => {
            require_file("--pois", &pois)?;
            guard_outputs(&[&pois], std::slice::from_ref(&out))?;
            let store = load_pois(&pois)?;
            let records: Vec<_> = store.iter().cloned().collect();
            write_jsonl(&out, &records)?;
            println!("{} places written to {}", records.len(), out.display());
            Ok(())
        }
        Command::BuildDataset { pois, facts, cot, out, seed, questions_per_fact, augmented, ratio } => {
            require_file("--pois", &pois)?;
            require_file("--facts", &facts)?;
            if let Some(c) = &cot {
                require_file("--cot", c)?;
            }
            let seed = cfg.seed(seed)?;
            let names = ["pois.jsonl", "qa.jsonl", "cot.jsonl", "manual_queue.jsonl", "rejected.jsonl", "split.json", "report.txt", "build.json"];
            let outputs: Vec<PathBuf> = names.iter().map(|n| out.join(n)).collect();
            let mut inputs = vec![pois.as_path(), facts.as_path()];
            inputs.extend(cot.as_deref());
            guard_outputs(&inputs, &outputs)?;

            let store = load_pois(&pois)?;
            let facts: Vec<Fact> = read_jsonl(&facts)?;
            let cots: Vec<CotRecord> = match &cot {
                Some(c) => read_jsonl(c)?,
                None => Vec::new(),
            };
            let bc = BuildConfig { questions_per_fact, augmented, ratio, seed, ..BuildConfig::default() };
            let built = build_dataset(&store, &facts, &cots, &mut ReferenceGenerator, &KeyedFieldChecker, &bc)?;
            let pois_out: Vec<_> = store.iter().cloned().collect();
            write_jsonl(&outputs[0], &pois_out)?;
            write_jsonl(&outputs[1], &built.qas)?;
            write_jsonl(&outputs[2], &built.cots)?;
            write_jsonl(&outputs[3], &built.manual_queue)?;
            write_jsonl(&outputs[4], &built.rejected)?;
            write_json(&outputs[5], &built.assignment)?;
            let report = built.report.to_string();
            write_atomic(&outputs[6], report.as_bytes())?;
            write_json(&outputs[7], &bc)?;
            print!("{report}");
            println!(
                "{} pairs accepted, {} rejected, {} queued for manual review",
                built.qas.len(),
                built.rejected.len(),
                built.manual_queue.len()
            );
            if !built.report.all_hold() {
                bail!("counting identities failed");
            }
            Ok(())
        }
        Command::Split { dir, ratio, seed, out } => {
            let dir = cfg.path("--dir", dir, cfg.paths.data.as_ref())?;
            require_dir("--dir", &dir)?;
            let seed = cfg.seed(seed)?;
            let (store, mut qas, mut cots) = read_built(&dir)?;
            let names = ["pois.jsonl", "qa.jsonl", "cot.jsonl", "split.json"];
            let outputs: Vec<PathBuf> = names.iter().map(|n| out.join(n)).collect();
            let inputs: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
            guard_outputs(&inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>(), &outputs)?;

            let a = split_dataset(&store, &qas, &cots, ratio, seed)?;
            a.apply(&mut qas, &mut cots);
            let violations = a.check_disjoint(&qas, &cots);
            if !violations.is_empty() {
                bail!("split is not place-disjoint: {violations:?}");
            }
            let pois_out: Vec<_> = store.iter().cloned().collect();
            write_jsonl(&outputs[0], &pois_out)?;
            write_jsonl(&outputs[1], &qas)?;
            write_jsonl(&outputs[2], &cots)?;
            write_json(&outputs[3], &a)?;
            let (train, test) = a.counts();
            println!("places: {train} train / {test} test; records written to {}", out.display());
            Ok(())
        }
        Command::Report { dir, questions_per_fact, out } => {
            let dir = cfg.path("--dir", dir, cfg.paths.data.as_ref())?;
            require_dir("--dir", &dir)?;
            let (store, qas, cots) = read_built(&dir)?;
            let k = match questions_per_fact {
                Some(k) => k,
                None if dir.join("build.json").exists() => read_json::<BuildConfig>(&dir.join("build.json"))?.questions_per_fact,
                None => DEFAULT_QUESTIONS_PER_FACT,
            };
            let stats = composition_report(&store, &qas, &cots, k);
            let mut text = stats.to_string();
            let mut ok = stats.all_hold();
            if dir.join("split.json").exists() {
                let a: SplitAssignment = read_json(&dir.join("split.json"))?;
                let v = a.check_disjoint(&qas, &cots);
                writeln!(text, "place-disjointness violations: {}", v.len())?;
                for x in &v {
                    writeln!(text, "  {x:?}")?;
                }
                ok &= v.is_empty();
            }
            emit(out.as_deref(), &text)?;
            if !ok {
                bail!("dataset report has failing checks");
            }
            Ok(())
        }
        Command::ConvertMcq { qa, pois, seed, out, split } => {
            require_file("--qa", &qa)?;
            require_file("--pois", &pois)?;
            let seed = cfg.seed(seed)?;
            guard_outputs(&[&qa, &pois], std::slice::from_ref(&out))?;
            let store = load_pois(&pois)?;
            let qas: Vec<QaPair> = read_jsonl(&qa)?;
            let pool = DistractorPool::new(&store, &qas);
            let keep = |q: &QaPair| match split {
                SplitFilter::All => true,
                SplitFilter::Train => q.split == Some(Split::Train),
                SplitFilter::Test => q.split == Some(Split::Test),
            };
            let items: Vec<McqItem> =
                qas.iter().filter(|q| keep(q)).map(|q| build_mcq(q, &pool, seed)).collect::<Result<_, _>>()?;
            write_jsonl(&out, &items)?;
            println!("{} items written to {}", items.len(), out.display());
            Ok(())
        }
        Command::Evaluate { items, predictions, out, weights, threshold, json, published } => {
            require_file("--items", &items)?;
            require_file("--predictions", &predictions)?;
            let threshold = cfg.threshold(threshold)?;
            let weights = cfg.weights(weights);
            let mut outputs = vec![out.clone()];
            outputs.extend(json.clone());
            guard_outputs(&[&items, &predictions], &outputs)?;
            let items: Vec<McqItem> = read_jsonl(&items)?;
            let preds: Vec<Prediction> = read_jsonl(&predictions)?;
            let resolved = resolve_predictions(&items, &preds, &Matcher { threshold })?;
            let report = score_run(&resolved, &items, weights)?;
            let mut text = report.to_string();
            if published {
                text.push_str(&published_table_checks());
            }
            if let Some(j) = &json {
                write_json(j, &report)?;
            }
            write_atomic(&out, text.as_bytes())?;
            print!("{text}");
            Ok(())
        }
        Command::Plan { instance, beam, out } => {
            require_file("--instance", &instance)?;
            guard_outputs(&[&instance], std::slice::from_ref(&out))?;
            let inst: PlanInstance = read_json(&instance)?;
            let width = cfg.beam(beam);
            let sol = solve(&inst, width)?;
            match &sol.itinerary {
                Some(it) => {
                    let verdict = feasible(it, &inst)?;
                    if !verdict.is_ok() {
                        bail!("solver produced an infeasible itinerary: {:?}", verdict.violations);
                    }
                    println!(
                        "{} visits, utility {}, cost {}",
                        it.visits.len(),
                        it.total_utility,
                        it.total_cost
                    );
                }
                None => println!("no itinerary schedules every locked place"),
            }
            write_json(&out, &sol.itinerary)
        }
        Command::PlanSession { query, image, city_fixture, out, beam, max_steps, seed } => {
            let dir = cfg.path("--city-fixture", city_fixture, cfg.paths.fixtures.as_ref())?;
            let city = load_city(&dir)?;
            let mut sc = SessionConfig { beam_width: cfg.beam(beam), seed: seed.or(cfg.seed).unwrap_or(0), ..SessionConfig::default() };
            if let Some(m) = max_steps {
                sc.max_steps = m;
            }
            let adapters =
                Adapters { catalog: &city.store.pois, gazetteer: &city.store.gazetteer, recognizer: &city.recognizer };
            let mut tools = crate::server::DelayedTools {
                store: &city.store,
                latency: std::time::Duration::from_millis(city.service.latency_ms),
            };
            let trace = run_session(&query, image.as_deref(), &sc, adapters, &mut tools)?;
            print!("{}", session_summary(&trace));
            if let Some(o) = &out {
                write_json(o, &trace)?;
            }
            Ok(())
        }
        Command::Serve { fixtures, bind, beam } => {
            let dir = cfg.path("--fixtures", fixtures, cfg.paths.fixtures.as_ref())?;
            let city = load_city(&dir)?;
            let sc = SessionConfig { beam_width: cfg.beam(beam), seed: cfg.seed.unwrap_or(0), ..SessionConfig::default() };
            let app = crate::server::AppState::new(city, sc);
            let rt = tokio::runtime::Runtime::new().context("cannot start async runtime")?;
            rt.block_on(crate::server::serve(app, bind))
        }
        Command::SusScore { responses, group_by, out, published } => {
            require_file("--responses", &responses)?;
            if let Some(o) = &out {
                guard_outputs(&[&responses], std::slice::from_ref(o))?;
            }
            let table = crate::sus::read_responses(&responses, group_by.as_deref())?;
            let mut text = crate::sus::report(&table)?;
            if published {
                text.push_str(&published_sus_checks());
            }
            emit(out.as_deref(), &text)
        }
    }
}

fn read_built(dir: &Path) -> Result<(wayfarer_core::dataset::PoiStore, Vec<QaPair>, Vec<CotRecord>)> {
    require_file("--dir", &dir.join("pois.jsonl"))?;
    require_file("--dir", &dir.join("qa.jsonl"))?;
    let store = load_pois(&dir.join("pois.jsonl"))?;
    let qas = read_jsonl(&dir.join("qa.jsonl"))?;
    let cots = read_jsonl_opt(&dir.join("cot.jsonl"))?;
    Ok((store, qas, cots))
}

pub fn session_summary(trace: &SessionTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "outcome: {}", trace.outcome().label());
    for step in &trace.steps {
        let _ = writeln!(s, "  {} {} -> {:?}", step.call.request_id, step.call.tool, step.response.status);
    }
    s.push_str(&trace.answer.text);
    s
}

/// Recomputes the published score table's Full column and relative gains.
pub fn published_table_checks() -> String {
    let mut s = String::from("\nPublished score table\n");
    let w = published::TEST_WEIGHTS;
    for row in &published::SCORES {
        let full = round_half_up(w.0 * row.text + w.1 * row.vqa, 1);
        let mark = if (full - row.full).abs() <= 0.15 { "ok" } else { "MISMATCH" };
        let _ = write!(s, "  {:<14} {:<11} full {:>5.1} printed {:>5.1} {mark}", row.method, row.llm, full, row.full);
        if let (Some(printed), Some(base)) = (row.delta, published::baseline_of(row)) {
            let pairs = [(base.text, row.text), (base.vqa, row.vqa), (base.full, row.full)];
            let got: Vec<f64> = pairs.iter().map(|(p, f)| improvement_delta(*p, *f).unwrap_or(f64::NAN)).collect();
            let ok = got.iter().zip(printed).all(|(g, p)| (g - p).abs() <= 0.15);
            let _ = write!(
                s,
                "  gains {:+.1}/{:+.1}/{:+.1} printed {:+.1}/{:+.1}/{:+.1} {}",
                got[0],
                got[1],
                got[2],
                printed[0],
                printed[1],
                printed[2],
                if ok { "ok" } else { "MISMATCH" }
            );
        }
        s.push('\n');
    }
    s
}

pub fn published_sus_checks() -> String {
    let mut s = String::from("\nPublished questionnaire columns\n");
    for c in check_published_columns() {
        let _ = writeln!(
            s,
            "  {:<12} item sum {:.1} reported {:.1} {}",
            c.system,
            c.item_sum,
            c.reported,
            if c.consistent() { "consistent" } else { "INCONSISTENT" }
        );
    }
    s
}
