use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why no plan exists for an instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Infeasibility {
    /// Every configuration costs more than the budget.
    BudgetBelowCheapest { cheapest: f64, budget: f64 },
    /// No configuration fits the model in memory.
    Memory { model: String },
    /// No configuration that can serve `(model, workload)` fits the availability limits.
    Availability { model: String, workload: u32 },
    /// Single configurations fit, but no combination covers every demanded class.
    Coverage,
    /// The search found no activation vector within the makespan target.
    Deadline { target: f64 },
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasibility::BudgetBelowCheapest { cheapest, budget } => write!(
                f,
                "budget below cheapest feasible configuration ({budget} $/h < {cheapest} $/h)"
            ),
            Infeasibility::Memory { model } => {
                write!(f, "no configuration has enough memory for model `{model}`")
            }
            Infeasibility::Availability { model, workload } => write!(
                f,
                "availability leaves no configuration able to serve model `{model}` workload {workload}"
            ),
            Infeasibility::Coverage => write!(
                f,
                "budget and availability cannot cover every demanded workload at once"
            ),
            Infeasibility::Deadline { target } => {
                write!(f, "no plan reaches a makespan of {target} s")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}: parse error at line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid {type_name} `{name}`: field `{field}` {reason}")]
    Invalid {
        type_name: &'static str,
        name: String,
        field: &'static str,
        reason: String,
    },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("model `{model}` workload {workload} cannot be served by any active configuration")]
    Unservable { model: String, workload: u32 },

    #[error("missing throughput entry for configuration `{config}` on workload {workload}")]
    MissingRate { config: String, workload: u32 },

    #[error("demand for model `{model}` workload {workload} is {count}, not a whole number of requests")]
    NonIntegralDemand {
        model: String,
        workload: u32,
        count: f64,
    },

    #[error("infeasible: {0}")]
    Infeasible(Infeasibility),

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(source_name: &str, err: &serde_json::Error) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    pub(crate) fn invalid(
        type_name: &'static str,
        name: impl Into<String>,
        field: &'static str,
        reason: impl Into<String>,
    ) -> Self {
        Error::Invalid {
            type_name,
            name: name.into(),
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn unknown(kind: &'static str, name: impl Into<String>) -> Self {
        Error::Unknown {
            kind,
            name: name.into(),
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_))
    }
}
