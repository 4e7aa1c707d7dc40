//! Diameter-corrected circle fit (DCM) of notch-type resonances.
//!
//! The pipeline per window: remove cable delay, divide out the wing
//! baseline, fit a circle algebraically, fit the phase about its centre
//! for `f_c` and `Q_l`, read `Q_l/|Q_c|` off the diameter and `phi` off the
//! off-resonant point, then refine everything jointly against the full
//! complex model.

mod algebraic;
mod dcm;
mod model;
mod phase;

pub use algebraic::{algebraic_circle_fit, Circle};
pub use dcm::{
    dcm_fit, dcm_fit_trace, dcm_fit_with, dcm_initial, fit_windows, model_rms, wing_noise, DcmCi,
    DcmGuess, DcmOptions, DcmResult,
};
pub use model::{dcm_model, DcmParams};
pub use phase::{magnitude_guess, phase_fit, phase_fit_from, phase_model, PhaseFit};
