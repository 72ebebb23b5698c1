//! Detector models.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AngularRate, Detection, EchoTrace};

/// Emitted optical field (slowly varying envelope) on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrace {
    pub times: Vec<f64>,
    pub field: Vec<Complex64>,
}

/// Fixed detector gains c₁ (heterodyne, per unit field) and c₂ (direct, per
/// unit intensity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorGains {
    pub heterodyne: f64,
    pub direct: f64,
}

impl Default for DetectorGains {
    fn default() -> Self {
        DetectorGains { heterodyne: 1.0, direct: 1.0 }
    }
}

/// Heterodyne: c₁·E(t)·e^(−iω_LO·t), whose real part is the beat note and
/// whose modulus is the envelope c₁|E|. Direct: c₂|E|².
pub fn detect(
    field: &FieldTrace,
    detection: Detection,
    lo_offset: Option<AngularRate>,
    gains: &DetectorGains,
) -> Result<EchoTrace> {
    match detection {
        Detection::Heterodyne => {
            let lo = match lo_offset {
                Some(lo) if lo.0 > 0.0 => lo,
                _ => return Err(Error::pre("detect", "heterodyne detection requires lo_offset > 0")),
            };
            let amps = field
                .times
                .iter()
                .zip(&field.field)
                .map(|(&t, &e)| gains.heterodyne * e * Complex64::from_polar(1.0, -lo.0 * t))
                .collect();
            EchoTrace::new(field.times.clone(), amps, detection, Some(lo))
        }
        Detection::Direct => {
            let amps = field.field.iter().map(|e| Complex64::new(gains.direct * e.norm_sqr(), 0.0)).collect();
            EchoTrace::new(field.times.clone(), amps, detection, None)
        }
    }
}
