use thiserror::Error;

/// Everything that can go wrong across the workbench.
///
/// The CLI maps these onto exit codes: `Domain` is a configuration or
/// out-of-domain problem (exit 2), `Regime` means the requested object does
/// not exist for these exponents (exit 3), and the remaining variants are
/// numerical failures (exit 4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("regime error: {0}")]
    Regime(String),

    #[error("step size underflow at t = {t:.6e}: {detail}")]
    StepFailure { t: f64, detail: String },

    #[error("seed label {0:.6e} overflows the representable branch range")]
    SeedOverflow(f64),

    #[error("no sign change bracketed in [{lo:.6e}, {hi:.6e}] while {what}")]
    BracketNotFound { lo: f64, hi: f64, what: String },

    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
}

pub type Result<T> = std::result::Result<T, Error>;
