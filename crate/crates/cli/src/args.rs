use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use memsim_core::engine::{Integrator, TransientConfig};
use memsim_core::experiments::{ExperimentKind, Realization};
use memsim_core::netlist::parse_number;

#[derive(Debug, Parser)]
#[command(name = "memsim", version, about = "Circuit simulator with memristor models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a netlist and write its waveforms as CSV.
    Run(RunArgs),
    /// Run one resistance-copying experiment.
    Experiment(ExperimentArgs),
    /// Run an experiment over several values of one parameter, in parallel.
    Sweep(SweepArgs),
}

/// SPICE-style number: `2k`, `500`, `10n`, `1e-3`.
pub fn spice_number(s: &str) -> Result<f64, String> {
    parse_number(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum IntegratorArg {
    Be,
    Trap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Increase,
    Decrease,
}

impl From<KindArg> for ExperimentKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Increase => ExperimentKind::Increase,
            KindArg::Decrease => ExperimentKind::Decrease,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RealizationArg {
    /// Built-in memristor device.
    Native,
    /// The behavioral HSPICE subcircuit.
    Subckt,
}

impl From<RealizationArg> for Realization {
    fn from(r: RealizationArg) -> Self {
        match r {
            RealizationArg::Native => Realization::Native,
            RealizationArg::Subckt => Realization::Subcircuit,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Rref,
    Supply,
}

#[derive(Debug, Args)]
pub struct TransientArgs {
    /// Stop time in seconds.
    #[arg(long, value_parser = spice_number)]
    pub tstop: Option<f64>,
    /// Time step in seconds (the initial step when adaptive).
    #[arg(long, value_parser = spice_number)]
    pub dt: Option<f64>,
    #[arg(long, value_enum)]
    pub integrator: Option<IntegratorArg>,
    /// Control the step by local truncation error.
    #[arg(long)]
    pub adaptive: bool,
}

impl TransientArgs {
    /// Applies overrides onto `base`, keeping dt_min at dt/1024.
    pub fn apply(&self, base: TransientConfig) -> TransientConfig {
        let t_stop = self.tstop.unwrap_or(base.t_stop);
        let dt = self.dt.unwrap_or(base.dt);
        let mut cfg = TransientConfig {
            integrator: base.integrator,
            adaptive: base.adaptive,
            ..TransientConfig::new(t_stop, dt)
        };
        if self.tstop.is_none() && self.dt.is_none() {
            cfg.dt_min = base.dt_min;
            cfg.dt_max = base.dt_max;
        }
        if let Some(i) = self.integrator {
            cfg.integrator = match i {
                IntegratorArg::Be => Integrator::BackwardEuler,
                IntegratorArg::Trap => Integrator::Trapezoidal,
            };
        }
        cfg.adaptive |= self.adaptive;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Netlist file.
    pub netlist: PathBuf,
    #[command(flatten)]
    pub transient: TransientArgs,
    /// Comma-separated signals, e.g. `v(out),i(v1),r(xmem)`; all when absent.
    #[arg(long)]
    pub probe: Option<String>,
    /// Operating-point hint for an op-amp output, `NAME=VOLTS`.
    #[arg(long = "hint", value_name = "NAME=VOLTS")]
    pub hints: Vec<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CircuitArgs {
    /// Reference resistance to copy.
    #[arg(long, value_parser = spice_number)]
    pub rref: Option<f64>,
    /// Initial memristance (default 1k for increase, 2k for decrease).
    #[arg(long, value_parser = spice_number)]
    pub rinit: Option<f64>,
    #[arg(long, value_parser = spice_number)]
    pub r1: Option<f64>,
    #[arg(long, value_parser = spice_number)]
    pub r2: Option<f64>,
    /// Supply A; the op-amp saturates at +/-A.
    #[arg(long, value_parser = spice_number)]
    pub supply: Option<f64>,
    #[arg(long, value_enum, default_value = "native")]
    pub realization: RealizationArg,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: KindArg,
    #[command(flatten)]
    pub circuit: CircuitArgs,
    #[command(flatten)]
    pub transient: TransientArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(value_enum)]
    pub kind: KindArg,
    /// Parameter to sweep.
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated values, at least two.
    #[arg(long, value_parser = spice_number, value_delimiter = ',', num_args = 1.., required = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub circuit: CircuitArgs,
    #[command(flatten)]
    pub transient: TransientArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Splits a probe list on commas outside parentheses, so `v(a,b)` stays whole.
pub fn split_probes(list: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in list.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur);
    out.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_lists() {
        assert_eq!(split_probes("v(a), v(a,b) ,r(xmem)"), ["v(a)", "v(a,b)", "r(xmem)"]);
        assert!(split_probes("").is_empty());
    }

    #[test]
    fn sweep_values_split_on_commas() {
        let cli = Cli::try_parse_from(["memsim", "sweep", "increase", "--axis", "rref", "--values", "2k,3k,4k"]).unwrap();
        match cli.command {
            Command::Sweep(a) => assert_eq!(a.values, [2e3, 3e3, 4e3]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn numbers_take_suffixes() {
        assert_eq!(spice_number("2k").unwrap(), 2000.0);
        assert!(spice_number("two").is_err());
    }
}
