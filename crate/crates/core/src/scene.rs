//! Random implant placement into an anatomy volume and metal/anatomy merging.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::implant::{random_implant, ImplantModel, KindSelector};
use crate::volume::Volume;

/// Anatomy HU the anchor voxel must exceed.
pub const ANCHOR_MIN_HU: f32 = 500.0;
/// Rejection-sampling attempts per implant.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 200;
pub const METAL_HU_RANGE: (f32, f32) = (3000.0, 8000.0);

/// One implant instance in scene coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub implant: ImplantModel,
    /// Euler angles `(x, y, z)` in radians; world = Rz · Ry · Rx · model.
    pub rotation_rad: [f64; 3],
    /// World position of the model-frame origin (the anchor).
    pub translation_mm: [f64; 3],
    pub hu_value: f32,
    /// Seed the implant geometry was drawn from.
    pub seed: u64,
}

impl Placement {
    pub fn rotation(&self) -> Rotation3<f64> {
        let [a, b, c] = self.rotation_rad;
        Rotation3::from_euler_angles(a, b, c)
    }

    /// World point to model frame.
    pub fn to_model(&self, p: [f64; 3]) -> [f64; 3] {
        let t = Vector3::from(self.translation_mm);
        let q = self.rotation().inverse() * (Vector3::from(p) - t);
        [q.x, q.y, q.z]
    }

    /// World-space axis-aligned box containing the rotated implant.
    pub fn world_bounds(&self) -> ([f64; 3], [f64; 3]) {
        let (lo, hi) = self.implant.bounds();
        let r = self.rotation();
        let t = Vector3::from(self.translation_mm);
        let mut wlo = [f64::INFINITY; 3];
        let mut whi = [f64::NEG_INFINITY; 3];
        for corner in 0..8 {
            let c = Vector3::new(
                if corner & 1 == 0 { lo[0] } else { hi[0] },
                if corner & 2 == 0 { lo[1] } else { hi[1] },
                if corner & 4 == 0 { lo[2] } else { hi[2] },
            );
            let w = r * c + t;
            for a in 0..3 {
                wlo[a] = wlo[a].min(w[a]);
                whi[a] = whi[a].max(w[a]);
            }
        }
        (wlo, whi)
    }

    /// Does the implant contain this world point (SDF at the inverse-rotated point ≤ 0)?
    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.implant.sdf(self.to_model(p)) <= 0.0
    }

    pub fn validate(&self) -> Result<()> {
        self.implant.validate()?;
        if !(METAL_HU_RANGE.0..=METAL_HU_RANGE.1).contains(&self.hu_value) {
            return Err(Error::invalid(format!("metal HU {} outside [3000, 8000]", self.hu_value)));
        }
        let two_pi = std::f64::consts::TAU;
        if self.rotation_rad.iter().any(|a| !(0.0..two_pi).contains(a)) {
            return Err(Error::invalid("rotation angles must lie in [0, 2π)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedScene {
    pub anatomy: Volume,
    /// Metal HU per voxel, 0 outside implants.
    pub metal: Volume,
    pub merged: Volume,
    pub placements: Vec<Placement>,
}

/// Writes each placement's HU into `metal` at every voxel center inside it.
/// Later placements overwrite earlier ones.
pub fn rasterize_placements(metal: &mut Volume, placements: &[Placement]) {
    let dims = metal.dims();
    let s = metal.spacing_mm();
    let origin = metal.origin_mm();
    let plane = dims[1] * dims[2];
    for placement in placements {
        let (lo, hi) = placement.world_bounds();
        let span = |a: usize| {
            let first = ((lo[a] - origin[a]) / s).ceil().max(0.0) as usize;
            let last = ((hi[a] - origin[a]) / s).floor();
            if last < 0.0 {
                return None;
            }
            let last = (last as usize).min(dims[a] - 1);
            (first <= last).then_some((first, last))
        };
        let (Some((i0, i1)), Some((j0, j1)), Some((k0, k1))) = (span(0), span(1), span(2)) else {
            continue;
        };
        let hu = placement.hu_value;
        metal.values_mut()[i0 * plane..(i1 + 1) * plane]
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(di, slab)| {
                let x = origin[0] + (i0 + di) as f64 * s;
                for j in j0..=j1 {
                    let y = origin[1] + j as f64 * s;
                    for k in k0..=k1 {
                        let z = origin[2] + k as f64 * s;
                        if placement.contains([x, y, z]) {
                            slab[j * dims[2] + k] = hu;
                        }
                    }
                }
            });
    }
}

/// Draws `n_implants` placements by rejection sampling against the anchor
/// constraint, rasterizes them and merges the result into the anatomy.
pub fn place_implants(anatomy: &Volume, n_implants: usize, seed: u64) -> Result<ComposedScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = anatomy.bounds_mm();
    let two_pi = std::f64::consts::TAU;
    let mut placements = Vec::with_capacity(n_implants);
    for index in 0..n_implants {
        let mut accepted = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let implant_seed = rng.next_u64();
            let implant = random_implant(implant_seed, KindSelector::Any);
            let rotation_rad = [0, 1, 2].map(|_| rng.random_range(0.0..two_pi));
            let translation_mm = [0, 1, 2].map(|a| rng.random_range(lo[a]..hi[a]));
            let Some([i, j, k]) = anatomy.nearest_voxel(translation_mm) else {
                continue;
            };
            if anatomy.get(i, j, k) > ANCHOR_MIN_HU {
                let hu_value = rng.random_range(METAL_HU_RANGE.0..=METAL_HU_RANGE.1);
                accepted = Some(Placement {
                    implant,
                    rotation_rad,
                    translation_mm,
                    hu_value,
                    seed: implant_seed,
                });
                break;
            }
        }
        match accepted {
            Some(p) => placements.push(p),
            None => {
                return Err(Error::PlacementInfeasible {
                    index,
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                    threshold_hu: ANCHOR_MIN_HU as f64,
                })
            }
        }
    }
    compose(anatomy, placements)
}

/// Builds the metal and merged volumes for an explicit list of placements.
pub fn compose(anatomy: &Volume, placements: Vec<Placement>) -> Result<ComposedScene> {
    for p in &placements {
        p.validate()?;
    }
    let mut metal = Volume::filled(anatomy.dims(), anatomy.spacing_mm(), anatomy.origin_mm(), 0.0)?;
    rasterize_placements(&mut metal, &placements);
    let merged = merge(anatomy, &metal)?;
    Ok(ComposedScene {
        anatomy: anatomy.clone(),
        metal,
        merged,
        placements,
    })
}

/// Per voxel: the metal value where it is positive, otherwise the anatomy value.
pub fn merge(anatomy: &Volume, metal: &Volume) -> Result<Volume> {
    if anatomy.dims() != metal.dims()
        || anatomy.spacing_mm() != metal.spacing_mm()
        || anatomy.origin_mm() != metal.origin_mm()
    {
        return Err(Error::invalid(format!(
            "merge needs matching grids: anatomy {:?}@{} vs metal {:?}@{}",
            anatomy.dims(),
            anatomy.spacing_mm(),
            metal.dims(),
            metal.spacing_mm()
        )));
    }
    let values = anatomy
        .values()
        .par_iter()
        .zip(metal.values().par_iter())
        .map(|(&a, &m)| if m > 0.0 { m } else { a })
        .collect();
    Volume::new(anatomy.dims(), anatomy.spacing_mm(), anatomy.origin_mm(), values)
}
