//! Amortized single-step posterior sampling for noisy linear inverse
//! problems, trained against an analytic Gaussian-mixture diffusion prior.
//!
//! The crate trains a measurement-to-posterior map with alternating updates:
//! a score network chases the diffused implicit distribution by denoising
//! score matching while the posterior map follows a data-consistency term
//! plus a score-distillation gradient against the prior score. Because the
//! prior is a Gaussian mixture, scores, posteriors and every training
//! gradient have closed forms to test against.
//!
//! Restoring a measurement afterwards costs exactly one network evaluation:
//!
//! ```
//! use davi_core::harness::config::ExperimentConfig;
//! use davi_core::harness::run_experiment_in;
//! use davi_core::operators::apply_forward_model;
//! use davi_core::rng::SeededRng;
//!
//! let cfg = ExperimentConfig::from_json(
//!     r#"{
//!     "seed": 5,
//!     "problem": {
//!         "prior": {"weights": [1.0], "means": [[0.5, -0.5]], "variances": [[0.3, 0.3]]},
//!         "operator": {"kind": "identity", "dim": 2},
//!         "noise": {"kind": "gaussian", "sigma_y": 0.2},
//!         "train_signals": 16
//!     },
//!     "schedule": {"num_steps": 40, "beta_min": 0.001, "beta_max": 0.05},
//!     "network": {"hidden": [8], "activation": "silu", "embed_dim": 4},
//!     "ppb": {"h": 0.05, "a_shape": [3.0, 1.0]},
//!     "loss": {"gamma": 1.0, "reg_coeff": 0.1, "ikl_t_max": 40},
//!     "train": {"iters": 10, "batch_size": 4, "lr_phi": 1e-3, "lr_psi": 1e-3},
//!     "eval": {"num_measurements": 0, "samples_per_measurement": 8}
//! }"#,
//! )
//! .unwrap();
//! let arts = run_experiment_in(&cfg, None).unwrap();
//!
//! let mut rng = SeededRng::new(1);
//! let x0 = arts.trainer.prior.sample(1, &mut rng).pop().unwrap();
//! let m = apply_forward_model(&arts.trainer.op, &x0, &arts.trainer.noise, &mut rng).unwrap();
//! let before = arts.state.phi.nfe();
//! let x_hat = arts
//!     .state
//!     .phi
//!     .sample(&m, &arts.trainer.op, &arts.trainer.sched, &mut rng)
//!     .unwrap();
//! assert_eq!(x_hat.len(), 2);
//! assert_eq!(arts.state.phi.nfe(), before + 1);
//! ```

pub mod diffusion;
pub mod error;
pub mod harness;
mod linalg;
pub mod losses;
pub mod networks;
pub mod operators;
pub mod ppb;
pub mod prior;
pub mod rng;
pub mod trainer;
pub(crate) mod vecops;

pub use error::{Error, Result};
