//! JSON run configuration.
//!
//! Matrices are given explicitly as `{"rows": r, "cols": c, "data": [...]}`
//! in row-major order. Unknown keys are rejected at every level.
//!
//! ```json
//! {
//!   "A":   {"rows": 2, "cols": 2, "data": [1.5, 0, 0, 0.9]},
//!   "C":   {"rows": 1, "cols": 2, "data": [1, 0]},
//!   "Q":   {"rows": 2, "cols": 2, "data": [0.5, 0, 0, 0.5]},
//!   "R":   {"rows": 1, "cols": 1, "data": [0.6]},
//!   "Pi0": {"rows": 2, "cols": 2, "data": [1, 0, 0, 1]},
//!   "lambda": 0.7, "lambda_e": 0.7, "eps1": 0.9, "eps2": 0.18,
//!   "enc_cost": 6, "beta": 0.5, "horizon": 6
//! }
//! ```
//!
//! Optional keys: `ladder_depth` (default `2·horizon + 1`), `riccati_tol`,
//! `riccati_max_iter`, `seed`, `trials`, `initial_remote_index`,
//! `initial_eve_index`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::linear_model::{
    steady_state_covariance, CovarianceLadder, SystemModel, DEFAULT_RICCATI_MAX_ITER, DEFAULT_RICCATI_TOL,
};
use crate::mdp::{default_ladder_depth, LadderState, ProblemParams};

/// Upper bounds that keep a configuration from requesting absurd work.
pub const MAX_STATE_DIM: usize = 64;
pub const MAX_HORIZON: usize = 10_000;
pub const MAX_LADDER_DEPTH: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixSpec {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| (i, j))).map(|ij| m[ij]).collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn to_matrix(&self, field: &str) -> Result<DMatrix<f64>> {
        if self.rows == 0 || self.cols == 0 || self.rows > MAX_STATE_DIM || self.cols > MAX_STATE_DIM {
            return Err(Error::config(
                field,
                format!("dimensions must lie in 1..={MAX_STATE_DIM}, got {}x{}", self.rows, self.cols),
            ));
        }
        if self.data.len() != self.rows * self.cols {
            return Err(Error::config(
                format!("{field}.data"),
                format!("expected {} entries for {}x{}, got {}", self.rows * self.cols, self.rows, self.cols, self.data.len()),
            ));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "A")]
    pub a: MatrixSpec,
    #[serde(rename = "C")]
    pub c: MatrixSpec,
    #[serde(rename = "Q")]
    pub q: MatrixSpec,
    #[serde(rename = "R")]
    pub r: MatrixSpec,
    #[serde(rename = "Pi0")]
    pub pi0: MatrixSpec,
    pub lambda: f64,
    pub lambda_e: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub enc_cost: f64,
    pub beta: f64,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub riccati_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub riccati_max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_remote_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_eve_index: Option<usize>,
}

/// Solver inputs derived from a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub params: ProblemParams,
    pub ladder: CovarianceLadder,
}

impl RunConfig {
    /// Parses and validates; the error carries line/column or a field path.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model(&self) -> Result<SystemModel> {
        SystemModel::new(
            self.a.to_matrix("A")?,
            self.c.to_matrix("C")?,
            self.q.to_matrix("Q")?,
            self.r.to_matrix("R")?,
            self.pi0.to_matrix("Pi0")?,
        )
    }

    pub fn initial(&self) -> LadderState {
        LadderState::new(self.initial_remote_index.unwrap_or(0), self.initial_eve_index.unwrap_or(0))
    }

    pub fn params(&self) -> Result<ProblemParams> {
        let model = self.model()?;
        let channel = ChannelParams::new(self.lambda, self.lambda_e, self.eps1, self.eps2)?;
        Ok(ProblemParams::new(model, channel, self.beta, self.enc_cost, self.horizon)?.with_initial(self.initial()))
    }

    pub fn effective_ladder_depth(&self) -> usize {
        self.ladder_depth.unwrap_or_else(|| default_ladder_depth(self.horizon) + self.initial().remote.max(self.initial().eve))
    }

    pub fn riccati_tol(&self) -> f64 {
        self.riccati_tol.unwrap_or(DEFAULT_RICCATI_TOL)
    }

    pub fn riccati_max_iter(&self) -> usize {
        self.riccati_max_iter.unwrap_or(DEFAULT_RICCATI_MAX_ITER)
    }

    /// Every check short of solving for the steady state.
    pub fn validate(&self) -> Result<()> {
        if self.horizon > MAX_HORIZON {
            return Err(Error::config("horizon", format!("must not exceed {MAX_HORIZON}")));
        }
        let params = self.params()?;
        params.model.validate_structure()?;
        let depth = self.effective_ladder_depth();
        if depth > MAX_LADDER_DEPTH {
            return Err(Error::config("ladder_depth", format!("must not exceed {MAX_LADDER_DEPTH}")));
        }
        if depth < params.min_ladder_depth() {
            return Err(Error::config(
                "ladder_depth",
                format!("must be at least {} for this horizon and start", params.min_ladder_depth()),
            ));
        }
        if let Some(tol) = self.riccati_tol {
            if tol.is_nan() || tol <= 0.0 {
                return Err(Error::config("riccati_tol", "must be positive"));
            }
        }
        if self.riccati_max_iter == Some(0) {
            return Err(Error::config("riccati_max_iter", "must be at least 1"));
        }
        if self.trials == Some(0) {
            return Err(Error::config("trials", "must be at least 1"));
        }
        Ok(())
    }

    /// Solves for `P*` and builds the ladder.
    pub fn problem(&self) -> Result<Problem> {
        self.problem_with_depth(self.effective_ladder_depth())
    }

    pub fn problem_with_depth(&self, depth: usize) -> Result<Problem> {
        let params = self.params()?;
        let pstar = steady_state_covariance(&params.model, self.riccati_tol(), self.riccati_max_iter())?;
        let ladder = CovarianceLadder::from_steady_state(&params.model, pstar, depth)?;
        Ok(Problem { params, ladder })
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_json_str(&text)
}
