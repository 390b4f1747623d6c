use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::grid::MAX_DIM;

/// Coefficient-field law. Every preset produces isotropic or axis-aligned cell matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Identity,
    ScaledIdentity {
        c: f64,
    },
    /// Two layers stacked along axis 0; the first `volume_fraction` of the box is `a_low`.
    LaminateTwoPhase {
        a_low: f64,
        a_high: f64,
        volume_fraction: f64,
    },
    /// Tiles of `tile_cells` cells per side; tiles with even coordinate sum are `a_low`.
    Checkerboard {
        a_low: f64,
        a_high: f64,
        tile_cells: usize,
    },
    /// Pareto-type eigenvalue pairs drawn independently per correlation block.
    HeavyTail {
        tail_index_lo: f64,
        tail_index_hi: f64,
        correlation_cells: usize,
    },
    /// `phi(x) = max(|x - center|, h)^-exponent` inside the unit ball, `1` outside.
    BesselTrap {
        exponent: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub model: Model,
    pub dimension: usize,
    #[serde(default)]
    pub seed: u64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        config(format!(
            "{name} must be finite and strictly positive, got {v}"
        ))
    }
}

impl Model {
    pub fn is_trap(&self) -> bool {
        matches!(self, Model::BesselTrap { .. })
    }
}

impl EnvironmentSpec {
    pub fn new(model: Model, dimension: usize, seed: u64) -> Self {
        EnvironmentSpec {
            model,
            dimension,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 || self.dimension > MAX_DIM {
            return config(format!(
                "dimension must be in 1..={MAX_DIM}, got {}",
                self.dimension
            ));
        }
        match self.model {
            Model::Identity => Ok(()),
            Model::ScaledIdentity { c } => positive("c", c),
            Model::LaminateTwoPhase {
                a_low,
                a_high,
                volume_fraction,
            } => {
                positive("a_low", a_low)?;
                positive("a_high", a_high)?;
                if !(volume_fraction > 0.0 && volume_fraction < 1.0) {
                    return config(format!(
                        "volume_fraction must lie in (0, 1), got {volume_fraction}"
                    ));
                }
                Ok(())
            }
            Model::Checkerboard {
                a_low,
                a_high,
                tile_cells,
            } => {
                positive("a_low", a_low)?;
                positive("a_high", a_high)?;
                if tile_cells == 0 {
                    return config("tile_cells must be at least 1");
                }
                Ok(())
            }
            Model::HeavyTail {
                tail_index_lo,
                tail_index_hi,
                correlation_cells,
            } => {
                positive("tail_index_lo", tail_index_lo)?;
                positive("tail_index_hi", tail_index_hi)?;
                if correlation_cells == 0 {
                    return config("correlation_cells must be at least 1");
                }
                Ok(())
            }
            Model::BesselTrap { exponent } => {
                positive("exponent", exponent)?;
                if self.dimension < 2 {
                    return config("bessel_trap requires dimension >= 2");
                }
                Ok(())
            }
        }
    }

    /// Extra constraints tying the model to a particular box size.
    pub(crate) fn validate_size(&self, cells_per_side: usize) -> Result<()> {
        if let Model::Checkerboard { tile_cells, .. } = self.model {
            if !cells_per_side.is_multiple_of(2 * tile_cells) {
                return config(format!(
                    "checkerboard needs cells_per_side divisible by 2*tile_cells = {}, got {cells_per_side}",
                    2 * tile_cells
                ));
            }
        }
        Ok(())
    }

    pub fn is_trap(&self) -> bool {
        self.model.is_trap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_parameters() {
        let bad = [
            Model::ScaledIdentity { c: 0.0 },
            Model::LaminateTwoPhase {
                a_low: 1.0,
                a_high: 4.0,
                volume_fraction: 1.0,
            },
            Model::Checkerboard {
                a_low: 1.0,
                a_high: -4.0,
                tile_cells: 1,
            },
            Model::Checkerboard {
                a_low: 1.0,
                a_high: 4.0,
                tile_cells: 0,
            },
            Model::HeavyTail {
                tail_index_lo: 3.0,
                tail_index_hi: f64::NAN,
                correlation_cells: 1,
            },
        ];
        for model in bad {
            assert!(EnvironmentSpec::new(model, 2, 0).validate().is_err());
        }
    }

    #[test]
    fn trap_needs_two_dimensions() {
        let spec = EnvironmentSpec::new(Model::BesselTrap { exponent: 1.0 }, 1, 0);
        assert!(spec.validate().is_err());
        let spec = EnvironmentSpec::new(Model::BesselTrap { exponent: 2.0 }, 2, 0);
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn model_serializes_with_kind_tag() {
        let spec = EnvironmentSpec::new(
            Model::Checkerboard {
                a_low: 1.0,
                a_high: 4.0,
                tile_cells: 2,
            },
            2,
            9,
        );
        let s = serde_json::to_string(&spec).unwrap();
        assert!(s.contains("\"kind\":\"checkerboard\""));
        let back: EnvironmentSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
    }
}
