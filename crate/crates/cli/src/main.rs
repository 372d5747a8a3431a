//! `memsim` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 netlist parse or elaboration,
//! 3 simulation, 4 file I/O (including refusal to overwrite without
//! `--force`).

mod args;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use rayon::prelude::*;

use args::{split_probes, spice_number, Axis, Cli, CircuitArgs, Command, ExperimentArgs, KindArg, OutputArgs, RunArgs, SweepArgs};
use memsim_core::engine::{BiasHints, Simulator, TransientConfig};
use memsim_core::error::ExperimentError;
use memsim_core::experiments::{run_experiment, ExperimentRun, ExperimentSpec};
use memsim_core::netlist::{flatten, parse_netlist};

const DEFAULT_OUT: &str = "memsim-out";

#[derive(Debug)]
enum Failure {
    Usage(String),
    Parse(String),
    Solve(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Parse(_) => 2,
            Failure::Solve(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Parse(m) | Failure::Solve(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let msg = e.to_string();
        match e {
            ExperimentError::Config(_) => Failure::Usage(msg),
            ExperimentError::Parse { .. } | ExperimentError::Flatten { .. } => Failure::Parse(msg),
            ExperimentError::Sim { .. } | ExperimentError::MissingSignal(_) => Failure::Solve(msg),
            ExperimentError::Io(_) => Failure::Io(msg),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

/// Output files, checked up front so nothing is simulated only to be
/// refused at the end.
struct Outputs {
    dir: PathBuf,
    force: bool,
}

impl Outputs {
    fn new(args: &OutputArgs) -> Self {
        Outputs {
            dir: args.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            force: args.force,
        }
    }

    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn check(&self, files: &[String]) -> Result<(), Failure> {
        if self.dir.exists() && !self.dir.is_dir() {
            return Err(Failure::Io(format!("{} is not a directory", self.dir.display())));
        }
        for f in files {
            let p = self.path(f);
            if p.exists() && !self.force {
                return Err(Failure::Io(format!(
                    "refusing to overwrite {} (pass --force)",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    fn write(&self, file: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let p = self.path(file);
        let mut w = io::BufWriter::new(fs::File::create(&p).map_err(io_err(&p))?);
        body(&mut w).and_then(|_| w.flush()).map_err(io_err(&p))?;
        Ok(p)
    }
}

fn parse_hints(raw: &[String]) -> Result<BiasHints, Failure> {
    let mut hints = BiasHints::default();
    for h in raw {
        let (name, v) = h
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--hint expects NAME=VOLTS, got '{h}'")))?;
        let v = spice_number(v.trim()).map_err(|e| Failure::Usage(format!("--hint {h}: {e}")))?;
        hints.opamp_outputs.push((name.trim().to_lowercase(), v));
    }
    Ok(hints)
}

fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.netlist).map_err(io_err(&a.netlist))?;
    let shown = a.netlist.display();
    let doc = parse_netlist(&text).map_err(|e| Failure::Parse(format!("{shown}:{e}")))?;
    if doc.cards.is_empty() {
        let last = text.lines().count().max(1);
        return Err(Failure::Parse(format!("{shown}:{last}:1: netlist has no element cards")));
    }
    let circuit = flatten(&doc, &Default::default()).map_err(|e| Failure::Parse(format!("{shown}: {e}")))?;
    for w in &circuit.warnings {
        eprintln!("warning: {w}");
    }

    let base = match (&circuit.tran, a.transient.tstop) {
        (Some(t), _) => {
            let mut cfg = TransientConfig::new(t.stop, t.step.min(t.stop));
            if let Some(m) = t.max_step {
                cfg.dt_max = m.max(cfg.dt);
            }
            cfg
        }
        (None, Some(stop)) => TransientConfig::new(stop, a.transient.dt.unwrap_or(stop / 1000.0)),
        (None, None) => return Err(Failure::Usage(format!("{shown} has no .tran directive; pass --tstop"))),
    };
    let cfg = a.transient.apply(base);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let hints = parse_hints(&a.hints)?;
    let probes = a.probe.as_deref().map(split_probes).unwrap_or_default();

    let outputs = a.output.out.as_ref().map(|_| Outputs::new(&a.output));
    let stem = a
        .netlist
        .file_stem()
        .map_or("run".into(), |s| s.to_string_lossy().into_owned());
    let file = format!("{stem}.csv");
    if let Some(o) = &outputs {
        o.check(std::slice::from_ref(&file))?;
    }

    let sim = Simulator::new(&circuit).map_err(|e| Failure::Solve(e.to_string()))?;
    let traces = sim.transient(&cfg, &hints).map_err(|e| match e {
        memsim_core::error::SimError::InvalidConfig(m) => Failure::Usage(m),
        e => Failure::Solve(e.to_string()),
    })?;
    for p in &probes {
        traces.probe(p).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let csv = traces
        .to_csv_string(&probes)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    match outputs {
        Some(o) => {
            let p = o.write(&file, |w| w.write_all(csv.as_bytes()))?;
            eprintln!("wrote {} ({} points)", p.display(), traces.len());
        }
        None => io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| Failure::Io(format!("stdout: {e}")))?,
    }
    Ok(())
}

fn base_spec(kind: KindArg, c: &CircuitArgs) -> ExperimentSpec {
    let mut spec = match kind {
        KindArg::Increase => ExperimentSpec::increase(c.rref.unwrap_or(2e3)),
        KindArg::Decrease => ExperimentSpec::decrease(c.rref.unwrap_or(500.0)),
    };
    if let Some(v) = c.rinit {
        spec.r_init = v;
    }
    if let Some(v) = c.r1 {
        spec.r1 = v;
    }
    if let Some(v) = c.r2 {
        spec.r2 = v;
    }
    if let Some(v) = c.supply {
        spec.supply = v;
    }
    spec.realization = c.realization.into();
    spec
}

fn validate(spec: &ExperimentSpec) -> Result<(), Failure> {
    for w in spec.validate()? {
        eprintln!("warning: {w}");
    }
    spec.transient.validate().map_err(|e| Failure::Usage(e.to_string()))
}

fn run_files(spec: &ExperimentSpec) -> [String; 2] {
    let name = spec.name();
    [format!("{name}.csv"), format!("{name}.json")]
}

fn write_run(out: &Outputs, run: &ExperimentRun) -> Result<[PathBuf; 2], Failure> {
    let [csv, json] = run_files(&run.spec);
    let csv = out.write(&csv, |w| {
        run.write_csv(w)
            .map_err(|e| io::Error::other(e.to_string()))
    })?;
    let json = out.write(&json, |w| writeln!(w, "{}", run.metrics.to_json()))?;
    Ok([csv, json])
}

fn ms(t: Option<f64>) -> String {
    t.map_or("not settled".into(), |t| format!("{:.3} ms", t * 1e3))
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<(), Failure> {
    let mut spec = base_spec(a.kind, &a.circuit);
    spec.transient = a.transient.apply(spec.transient.clone());
    validate(&spec)?;
    let out = Outputs::new(&a.output);
    out.check(&run_files(&spec))?;

    let run = run_experiment(&spec)?;
    let m = &run.metrics;
    let [csv, json] = write_run(&out, &run)?;
    println!("experiment     {}", m.experiment);
    println!(
        "final_r        {:.2} ohm (r_ref {}, {})",
        m.final_r,
        spec.r_ref,
        if m.converged { "converged" } else { "not converged" }
    );
    println!("settling 5%    {}", ms(m.settling_time_5pct));
    println!("settling 2%    {}", ms(m.settling_time_2pct));
    println!("steady slope   {:.2} ohm", m.steady_slope);
    println!("steps          {}", m.steps);
    println!("csv            {}", csv.display());
    println!("metrics        {}", json.display());
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("MEMSIM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Usage(format!("MEMSIM_THREADS must be a positive integer, got '{v}'")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    if a.values.len() < 2 {
        return Err(Failure::Usage("a sweep needs at least two --values".into()));
    }
    let specs: Vec<ExperimentSpec> = a
        .values
        .iter()
        .map(|&v| {
            let mut spec = base_spec(a.kind, &a.circuit);
            match a.axis {
                Axis::Rref => spec.r_ref = v,
                Axis::Supply => spec.supply = v,
            }
            spec.transient = a.transient.apply(spec.transient.clone());
            spec
        })
        .collect();
    for s in &specs {
        validate(s)?;
    }
    let axis = match a.axis {
        Axis::Rref => "rref",
        Axis::Supply => "supply",
    };
    let kind = specs[0].kind.as_str();
    // Runs differing only in supply share a name; tag files with the value.
    let tag = |s: &ExperimentSpec| match a.axis {
        Axis::Rref => s.name(),
        Axis::Supply => format!("{}-a{}", s.name(), s.supply),
    };
    let summary = format!("sweep-{kind}-{axis}.csv");
    let out = Outputs::new(&a.output);
    let mut files: Vec<String> = specs
        .iter()
        .flat_map(|s| [format!("{}.csv", tag(s)), format!("{}.json", tag(s))])
        .collect();
    files.push(summary.clone());
    out.check(&files)?;

    let pool = thread_pool()?;
    let results: Vec<Result<ExperimentRun, ExperimentError>> =
        pool.install(|| specs.par_iter().map(run_experiment).collect());

    let mut rows = Vec::new();
    let mut failed = 0;
    for ((spec, value), result) in specs.iter().zip(&a.values).zip(results) {
        match result {
            Ok(run) => {
                let t = tag(spec);
                out.write(&format!("{t}.csv"), |w| {
                    run.write_csv(w).map_err(|e| io::Error::other(e.to_string()))
                })?;
                out.write(&format!("{t}.json"), |w| writeln!(w, "{}", run.metrics.to_json()))?;
                let m = &run.metrics;
                let opt = |t: Option<f64>| t.map_or(String::new(), |t| format!("{t:.8e}"));
                rows.push(format!(
                    "{value:.8e},{},{},{:.8e},ok",
                    opt(m.settling_time_5pct),
                    opt(m.settling_time_2pct),
                    m.final_r
                ));
                println!(
                    "{axis}={value:<10} settling 5% {:<14} final_r {:.2} ohm",
                    ms(m.settling_time_5pct),
                    m.final_r
                );
            }
            Err(e) => {
                failed += 1;
                rows.push(format!("{value:.8e},,,,failed"));
                eprintln!("error: {axis}={value}: {e}");
            }
        }
    }
    let p = out.write(&summary, |w| {
        writeln!(w, "value,settling_time_5pct,settling_time_2pct,final_r,status")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    println!("summary        {}", p.display());
    if failed > 0 {
        return Err(Failure::Solve(format!("{failed} of {} sweep runs failed", specs.len())));
    }
    Ok(())
}
