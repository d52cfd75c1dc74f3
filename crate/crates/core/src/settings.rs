//! Numerical tolerances and scan parameters shared by every stage.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    /// Relative singular-value threshold for rank and kernel decisions.
    pub rank_tol: f64,
    /// Residual tolerance for linear identities.
    pub tau_lin: f64,
    /// Positivity threshold for Hermitian square roots.
    pub tau_pos: f64,
    /// Hermiticity threshold.
    pub tau_herm: f64,
    pub ode_rtol: f64,
    pub ode_atol: f64,
    /// Tail integral of |V| below which the plane-wave asymptotics are used.
    pub tail_tol: f64,
    /// Starting point used with an exact asymptotic Jost solution when the
    /// tail criterion cannot be met below the cap.
    pub oracle_start: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub scan_points: usize,
    /// Tolerance on kappa when polishing bound-state roots.
    pub root_tol: f64,
    pub quad_rtol: f64,
    /// Distance to k = +-i kappa below which removable singularities are
    /// avoided by switching formulas.
    pub singular_guard: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            rank_tol: 1e-8,
            tau_lin: 1e-10,
            tau_pos: 1e-12,
            tau_herm: 1e-12,
            ode_rtol: 1e-10,
            ode_atol: 1e-12,
            tail_tol: 1e-12,
            oracle_start: 40.0,
            kappa_min: 1e-3,
            kappa_max: 50.0,
            scan_points: 400,
            root_tol: 1e-10,
            quad_rtol: 1e-11,
            singular_guard: 1e-3,
        }
    }
}

impl Settings {
    pub const NAMES: [&'static str; 14] = [
        "rank_tol",
        "tau_lin",
        "tau_pos",
        "tau_herm",
        "ode_rtol",
        "ode_atol",
        "tail_tol",
        "oracle_start",
        "kappa_min",
        "kappa_max",
        "scan_points",
        "root_tol",
        "quad_rtol",
        "singular_guard",
    ];

    /// Override one named value; values must be finite and positive.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), String> {
        if !(value.is_finite() && value > 0.0) {
            return Err(format!("tolerance {name} must be finite and positive, got {value}"));
        }
        match name {
            "rank_tol" => self.rank_tol = value,
            "tau_lin" => self.tau_lin = value,
            "tau_pos" => self.tau_pos = value,
            "tau_herm" => self.tau_herm = value,
            "ode_rtol" => self.ode_rtol = value,
            "ode_atol" => self.ode_atol = value,
            "tail_tol" => self.tail_tol = value,
            "oracle_start" => self.oracle_start = value,
            "kappa_min" => self.kappa_min = value,
            "kappa_max" => self.kappa_max = value,
            "scan_points" => {
                if value < 3.0 {
                    return Err("scan_points must be at least 3".into());
                }
                self.scan_points = value as usize
            }
            "root_tol" => self.root_tol = value,
            "quad_rtol" => self.quad_rtol = value,
            "singular_guard" => self.singular_guard = value,
            _ => {
                return Err(format!(
                    "unknown tolerance {name}; known names: {}",
                    Self::NAMES.join(", ")
                ))
            }
        }
        Ok(())
    }

    pub fn ode_options(&self) -> crate::ode::OdeOptions {
        crate::ode::OdeOptions {
            rtol: self.ode_rtol,
            atol: self.ode_atol,
            ..Default::default()
        }
    }

    pub fn quad_options(&self) -> crate::quad::QuadOptions {
        crate::quad::QuadOptions {
            rtol: self.quad_rtol,
            atol: 1e-300,
            max_intervals: 4000,
        }
    }
}
