use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("memristor state x={0} outside [0, 1]")]
    StateOutOfRange(f64),
    #[error("resistance {r} outside [{r_on}, {r_off}]")]
    ResistanceOutOfRange { r: f64, r_on: f64, r_off: f64 },
    #[error("invalid device parameters: {0}")]
    InvalidParams(String),
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
    #[error("scalar state update did not converge (x={x}, i={current}, dt={dt})")]
    ScalarNewtonDiverged { x: f64, current: f64, dt: f64 },
}

/// Source position of a parse error (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("{location}: {message}")]
    Syntax { location: Location, message: String },
    #[error("empty netlist")]
    Empty,
}

impl ParseError {
    pub fn at(line: usize, column: usize, message: impl Into<String>) -> Self {
        ParseError::Syntax {
            location: Location { line, column },
            message: message.into(),
        }
    }

    pub fn location(&self) -> Option<Location> {
        match self {
            ParseError::Syntax { location, .. } => Some(*location),
            ParseError::Empty => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unresolved parameter '{0}'")]
    UnresolvedParam(String),
    #[error("unresolved node '{0}'")]
    UnresolvedNode(String),
    #[error("unresolved branch current '{0}'")]
    UnresolvedBranch(String),
    #[error("expression refers to signals where only parameters are allowed: {0}")]
    NotConstant(String),
    #[error("slot {0} out of range")]
    BadSlot(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlattenError {
    #[error("unknown subcircuit '{name}' used by '{instance}'")]
    UnknownSubckt { instance: String, name: String },
    #[error("'{instance}' connects {given} nodes but subcircuit '{subckt}' has {expected} ports")]
    PortArity {
        instance: String,
        subckt: String,
        expected: usize,
        given: usize,
    },
    #[error("recursive instantiation of subcircuit '{0}'")]
    Recursive(String),
    #[error("'{instance}': unknown parameter '{param}' for '{subckt}'")]
    UnknownParam {
        instance: String,
        subckt: String,
        param: String,
    },
    #[error("'{element}': {source}")]
    Expr {
        element: String,
        #[source]
        source: ExprError,
    },
    #[error("'{element}': {source}")]
    Device {
        element: String,
        #[source]
        source: DeviceError,
    },
    #[error("'{element}': {message}")]
    InvalidValue { element: String, message: String },
    #[error("duplicate element name '{0}' after flattening")]
    DuplicateElement(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("singular MNA matrix{0}")]
    Singular(String),
    #[error("Newton iteration did not converge after {iterations} iterations (worst residual at {worst})")]
    NewtonFailed { iterations: usize, worst: String },
    #[error("DC operating point failed: all homotopies exhausted (worst residual at {worst})")]
    DcFailed { worst: String },
    #[error("timestep underflow at t={time:e} s (dt={dt:e} s)")]
    TimestepUnderflow { time: f64, dt: f64 },
    #[error("non-finite value in solution at t={0:e} s")]
    NonFinite(f64),
    #[error("invalid transient configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown signal '{requested}'; available: {available}")]
    UnknownSignal { requested: String, available: String },
    #[error("{0}")]
    Expr(#[from] ExprError),
    #[error("{0}")]
    Device(#[from] DeviceError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("{experiment}: {source}")]
    Sim {
        experiment: String,
        #[source]
        source: SimError,
    },
    #[error("{experiment}: {source}")]
    Parse {
        experiment: String,
        #[source]
        source: ParseError,
    },
    #[error("{experiment}: {source}")]
    Flatten {
        experiment: String,
        #[source]
        source: FlattenError,
    },
    #[error("missing signal for metric: {0}")]
    MissingSignal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
