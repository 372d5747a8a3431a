use std::borrow::Cow;
use std::io::{self, Write};

use indexmap::IndexMap;

use crate::error::SimError;

/// Waveforms from one transient run, one sample per accepted time point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceSet {
    time: Vec<f64>,
    signals: IndexMap<String, Vec<f64>>,
    /// Largest KCL residual at each accepted point, amperes.
    pub kcl_residual: Vec<f64>,
    /// Newton iterations spent on each accepted point.
    pub newton_iterations: Vec<usize>,
}

/// Canonical form of a probe selector: lowercase, no whitespace.
pub fn normalize_selector(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase()
}

impl TraceSet {
    pub fn new(names: Vec<String>) -> Self {
        TraceSet {
            signals: names.into_iter().map(|n| (n, Vec::new())).collect(),
            ..Default::default()
        }
    }

    pub(crate) fn push(&mut self, t: f64, values: &[f64], kcl: f64, iterations: usize) {
        debug_assert_eq!(values.len(), self.signals.len());
        self.time.push(t);
        for (trace, v) in self.signals.values_mut().zip(values) {
            trace.push(*v);
        }
        self.kcl_residual.push(kcl);
        self.newton_iterations.push(iterations);
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.signals.keys().map(String::as_str)
    }

    pub fn signal(&self, name: &str) -> Option<&[f64]> {
        self.signals.get(name).map(Vec::as_slice)
    }

    /// Looks up a selector such as `v(out)`, `i(v1)`, `x(xmem)`, `time`, or
    /// the differential form `v(a,b)`.
    pub fn probe(&self, selector: &str) -> Result<Cow<'_, [f64]>, SimError> {
        let sel = normalize_selector(selector);
        if sel == "time" {
            return Ok(Cow::Borrowed(&self.time));
        }
        if let Some(s) = self.signals.get(&sel) {
            return Ok(Cow::Borrowed(s));
        }
        if let Some(inner) = sel.strip_prefix("v(").and_then(|s| s.strip_suffix(')')) {
            if let Some((a, b)) = inner.split_once(',') {
                let va = self.node_voltage(a);
                let vb = self.node_voltage(b);
                if let (Some(va), Some(vb)) = (va, vb) {
                    return Ok(Cow::Owned(va.iter().zip(vb.iter()).map(|(x, y)| x - y).collect()));
                }
            }
        }
        Err(SimError::UnknownSignal {
            requested: selector.to_string(),
            available: self.names().collect::<Vec<_>>().join(", "),
        })
    }

    fn node_voltage(&self, node: &str) -> Option<Cow<'_, [f64]>> {
        if node == "0" || node == "gnd" {
            return Some(Cow::Owned(vec![0.0; self.len()]));
        }
        self.signal(&format!("v({node})")).map(Cow::Borrowed)
    }

    /// Writes `time` followed by the selected signals (all when empty).
    pub fn write_csv(&self, mut w: impl Write, selectors: &[String]) -> Result<(), SimError> {
        let (names, columns): (Vec<String>, Vec<Cow<[f64]>>) = if selectors.is_empty() {
            self.signals
                .iter()
                .map(|(k, v)| (k.clone(), Cow::Borrowed(v.as_slice())))
                .unzip()
        } else {
            let mut names = Vec::new();
            let mut cols = Vec::new();
            for s in selectors {
                cols.push(self.probe(s)?);
                names.push(normalize_selector(s));
            }
            (names, cols)
        };
        let io = |e: io::Error| SimError::InvalidConfig(format!("write failed: {e}"));
        write!(w, "time").map_err(io)?;
        for n in &names {
            write!(w, ",{n}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for (i, t) in self.time.iter().enumerate() {
            write!(w, "{t:.8e}").map_err(io)?;
            for c in &columns {
                write!(w, ",{:.8e}", c[i]).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, selectors: &[String]) -> Result<String, SimError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, selectors)?;
        Ok(String::from_utf8(buf).expect("csv is ascii"))
    }
}
