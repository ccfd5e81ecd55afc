//! X-ray physics: material attenuation tables, source spectrum,
//! polychromatic intensity, photon noise, log/normalize, gamma and
//! ground-truth mask thresholding.
//!
//! Units: mass attenuation in cm²/g, density in g/cm³, areal density in
//! g/cm², path lengths in mm.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, Mask};

/// Material classes of the four-way HU decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Air = 0,
    SoftTissue = 1,
    Bone = 2,
    Metal = 3,
}

impl Material {
    pub const ALL: [Material; 4] = [Material::Air, Material::SoftTissue, Material::Bone, Material::Metal];

    /// air < −800 ≤ soft tissue ≤ 350 < bone ≤ 2000 < metal
    #[inline]
    pub fn from_hu(hu: f32) -> Material {
        if hu < -800.0 {
            Material::Air
        } else if hu <= 350.0 {
            Material::SoftTissue
        } else if hu <= 2000.0 {
            Material::Bone
        } else {
            Material::Metal
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Material::Air => "air",
            Material::SoftTissue => "soft_tissue",
            Material::Bone => "bone",
            Material::Metal => "metal",
        }
    }
}

/// Mass attenuation coefficient versus photon energy, log-log interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationTable {
    pub energies_kev: Vec<f64>,
    pub mu_over_rho_cm2_g: Vec<f64>,
}

impl AttenuationTable {
    pub fn new(energies_kev: Vec<f64>, mu_over_rho_cm2_g: Vec<f64>) -> Result<Self> {
        if energies_kev.len() != mu_over_rho_cm2_g.len() || energies_kev.len() < 2 {
            return Err(Error::invalid("attenuation table needs >= 2 matching rows"));
        }
        if energies_kev.windows(2).any(|w| !(w[1] > w[0])) || energies_kev[0] <= 0.0 {
            return Err(Error::invalid("table energies must be positive and strictly increasing"));
        }
        if mu_over_rho_cm2_g.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::invalid("mass attenuation values must be > 0"));
        }
        if mu_over_rho_cm2_g.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::invalid("mass attenuation must decrease with energy"));
        }
        Ok(Self {
            energies_kev,
            mu_over_rho_cm2_g,
        })
    }

    /// Parses `energy_keV,mu_over_rho_cm2_g` CSV text.
    pub fn from_csv(text: &str) -> Result<Self> {
        let (e, m) = parse_two_column_csv(text, "mu_over_rho_cm2_g")?;
        Self::new(e, m)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn range_kev(&self) -> (f64, f64) {
        (self.energies_kev[0], *self.energies_kev.last().unwrap())
    }

    /// μ/ρ at `energy_kev`; errors outside the tabulated range.
    pub fn at(&self, energy_kev: f64) -> Result<f64> {
        let (lo, hi) = self.range_kev();
        if !(energy_kev >= lo && energy_kev <= hi) {
            return Err(Error::invalid(format!(
                "energy {energy_kev} keV outside table range [{lo}, {hi}]"
            )));
        }
        let i = self.energies_kev.partition_point(|&e| e <= energy_kev).clamp(1, self.energies_kev.len() - 1);
        let (e0, e1) = (self.energies_kev[i - 1].ln(), self.energies_kev[i].ln());
        let (m0, m1) = (self.mu_over_rho_cm2_g[i - 1].ln(), self.mu_over_rho_cm2_g[i].ln());
        let t = (energy_kev.ln() - e0) / (e1 - e0);
        Ok((m0 + t * (m1 - m0)).exp())
    }
}

fn parse_two_column_csv(text: &str, second: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::invalid("empty CSV"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["energy_keV", second] {
        return Err(Error::invalid(format!(
            "CSV header must be `energy_keV,{second}`, found `{header}`"
        )));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (n, line) in lines.enumerate() {
        let mut it = line.split(',').map(str::trim);
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::invalid(format!("CSV row {}: `{line}`", n + 2)))
        };
        a.push(parse(it.next())?);
        b.push(parse(it.next())?);
        if it.next().is_some() {
            return Err(Error::invalid(format!("CSV row {}: too many columns", n + 2)));
        }
    }
    Ok((a, b))
}

/// Discrete source spectrum: `(energy, fluence weight)` bins with unit total weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub bins: Vec<(f64, f64)>,
}

impl Spectrum {
    pub fn new(bins: Vec<(f64, f64)>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::invalid("spectrum needs at least one bin"));
        }
        if bins.iter().any(|&(e, w)| !(e > 0.0) || !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("spectrum energies must be > 0 and weights >= 0"));
        }
        let total: f64 = bins.iter().map(|b| b.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("spectrum weights sum to {total}, expected 1")));
        }
        Ok(Self { bins })
    }

    pub fn monochromatic(energy_kev: f64) -> Result<Self> {
        Self::new(vec![(energy_kev, 1.0)])
    }

    /// Parses `energy_keV,weight` CSV; weights are rescaled to unit sum.
    pub fn from_csv(text: &str) -> Result<Self> {
        let (e, w) = parse_two_column_csv(text, "weight")?;
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("spectrum weights sum to zero"));
        }
        Self::new(e.into_iter().zip(w.into_iter().map(|x| x / total)).collect())
    }

    pub fn from_csv_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn mean_energy_kev(&self) -> f64 {
        self.bins.iter().map(|(e, w)| e * w).sum()
    }
}

/// Piecewise-linear HU → density (g/cm³) for non-metal voxels, linearly
/// extrapolated past the end knots and floored at zero; metal gets a fixed density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    pub knots: Vec<(f64, f64)>,
    pub metal_g_cm3: f64,
}

impl Default for DensityMap {
    fn default() -> Self {
        Self {
            knots: vec![(-1000.0, 0.0012), (0.0, 1.0), (1500.0, 1.92)],
            metal_g_cm3: 4.5,
        }
    }
}

impl DensityMap {
    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 || self.knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::invalid("density knots need >= 2 strictly increasing HU values"));
        }
        if !(self.metal_g_cm3 > 0.0) {
            return Err(Error::invalid("metal density must be > 0"));
        }
        Ok(())
    }

    pub fn density(&self, hu: f32) -> f64 {
        if Material::from_hu(hu) == Material::Metal {
            return self.metal_g_cm3;
        }
        let h = hu as f64;
        let k = &self.knots;
        let i = k.partition_point(|&(x, _)| x <= h).clamp(1, k.len() - 1);
        let ((x0, y0), (x1, y1)) = (k[i - 1], k[i]);
        (y0 + (h - x0) * (y1 - y0) / (x1 - x0)).max(0.0)
    }
}

const DEFAULT_SPECTRUM: &str = include_str!("../data/spectrum_90kvp.csv");
const DEFAULT_TABLES: [&str; 4] = [
    include_str!("../data/attenuation/air.csv"),
    include_str!("../data/attenuation/soft_tissue.csv"),
    include_str!("../data/attenuation/bone.csv"),
    include_str!("../data/attenuation/metal.csv"),
];

/// Spectrum, per-material attenuation and density mapping.
///
/// The shipped soft-tissue table is water, so it also provides μ_water for
/// the monochromatic HU conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub spectrum: Spectrum,
    /// Indexed by `Material as usize`.
    pub tables: [AttenuationTable; 4],
    pub density: DensityMap,
}

impl Default for MaterialModel {
    fn default() -> Self {
        let tables = DEFAULT_TABLES.map(|t| AttenuationTable::from_csv(t).expect("bundled table"));
        Self {
            spectrum: Spectrum::from_csv(DEFAULT_SPECTRUM).expect("bundled spectrum"),
            tables,
            density: DensityMap::default(),
        }
    }
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        Spectrum::new(self.spectrum.bins.clone())?;
        self.density.validate()?;
        for (energy, _) in &self.spectrum.bins {
            for t in &self.tables {
                t.at(*energy)?;
            }
        }
        Ok(())
    }

    pub fn table(&self, m: Material) -> &AttenuationTable {
        &self.tables[m as usize]
    }

    pub fn with_spectrum(mut self, spectrum: Spectrum) -> Self {
        self.spectrum = spectrum;
        self
    }

    /// Linear attenuation of water in mm⁻¹ (ρ = 1 g/cm³).
    pub fn mu_water_per_mm(&self, energy_kev: f64) -> Result<f64> {
        Ok(self.table(Material::SoftTissue).at(energy_kev)? * 0.1)
    }

    /// Linear attenuation in mm⁻¹ of a voxel from its material class and density.
    pub fn mu_per_mm(&self, hu: f32, energy_kev: f64) -> Result<f64> {
        let m = Material::from_hu(hu);
        Ok(self.table(m).at(energy_kev)? * self.density.density(hu) * 0.1)
    }
}

/// Monochromatic HU → μ conversion: `μ_water(E) · (1 + HU/1000)`, clamped at 0.
#[inline]
pub fn hu_to_mu(hu: f32, mu_water_per_mm: f64) -> f64 {
    (mu_water_per_mm * (1.0 + hu as f64 / 1000.0)).max(0.0)
}

/// `I/I₀ = Σ_k S_k · exp(−Σ_m (μ/ρ)_m(E_k) · a_m)` per pixel; `areal` holds one
/// g/cm² map per material in [`Material::ALL`] order.
pub fn polychromatic_intensity(areal: &[Image; 4], model: &MaterialModel) -> Result<Image> {
    let (w, h) = (areal[0].width, areal[0].height);
    if areal.iter().any(|a| a.width != w || a.height != h) {
        return Err(Error::invalid("areal density maps must share one shape"));
    }
    if areal.iter().any(|a| a.data.iter().any(|&v| !(v >= 0.0) || !v.is_finite())) {
        return Err(Error::invalid("areal densities must be finite and >= 0"));
    }
    let mut coeffs = Vec::with_capacity(model.spectrum.bins.len());
    for &(energy, weight) in &model.spectrum.bins {
        let mut per_material = [0.0; 4];
        for m in Material::ALL {
            per_material[m as usize] = model.table(m).at(energy)?;
        }
        coeffs.push((weight, per_material));
    }
    let data = (0..w * h)
        .into_par_iter()
        .map(|px| {
            let a = [areal[0].data[px], areal[1].data[px], areal[2].data[px], areal[3].data[px]];
            let i: f64 = coeffs
                .iter()
                .map(|(s, mu)| s * (-(mu[0] * a[0] + mu[1] * a[1] + mu[2] * a[2] + mu[3] * a[3])).exp())
                .sum();
            i.max(f64::MIN_POSITIVE)
        })
        .collect();
    Image::new(w, h, data)
}

/// Photon statistics and augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub gamma_range: [f64; 2],
    pub photons_per_pixel: f64,
    pub noise_seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            gamma_range: [0.7, 1.3],
            photons_per_pixel: 1e5,
            noise_seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.gamma_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!("gamma range {lo}..{hi} must satisfy 0 < low <= high")));
        }
        if !(self.photons_per_pixel >= 1.0 && self.photons_per_pixel.is_finite()) {
            return Err(Error::invalid("photons_per_pixel must be >= 1"));
        }
        Ok(())
    }
}

/// Replaces each relative intensity by `Poisson(N₀·I/I₀) / N₀`, with zero
/// counts clamped to `1/(2N₀)`.
///
/// Pixel `n` draws from ChaCha stream `n` of `seed`, so results do not depend
/// on evaluation order or thread count.
pub fn add_poisson_noise(rel_intensity: &Image, photons_per_pixel: f64, seed: u64) -> Result<Image> {
    if !(photons_per_pixel >= 1.0 && photons_per_pixel.is_finite()) {
        return Err(Error::invalid("photon count N0 must be >= 1"));
    }
    if rel_intensity.data.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::invalid("relative intensity must lie in (0, 1]"));
    }
    let n0 = photons_per_pixel;
    let floor = 0.5 / n0;
    let data = rel_intensity
        .data
        .par_iter()
        .enumerate()
        .map(|(px, &rel)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(px as u64);
            let lambda = n0 * rel;
            let counts = match Poisson::new(lambda) {
                Ok(dist) => dist.sample(&mut rng),
                Err(_) => 0.0,
            };
            (counts / n0).max(floor)
        })
        .collect();
    Image::new(rel_intensity.width, rel_intensity.height, data)
}

/// `p = −ln(I/I₀)` followed by per-image min-max scaling to `[0, 1]`;
/// a constant image maps to zeros.
pub fn log_normalize(intensity: &Image) -> Result<Image> {
    if intensity.data.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("intensity must be finite and > 0 before the log"));
    }
    let p = intensity.map(|v| -v.ln());
    Ok(min_max_normalize(&p))
}

pub fn min_max_normalize(img: &Image) -> Image {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return Image::filled(img.width, img.height, 0.0);
    }
    img.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

/// Per-pixel `img^gamma`.
pub fn gamma_adjust(img: &Image, gamma: f64) -> Result<Image> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    if gamma == 1.0 {
        return Ok(img.clone());
    }
    Ok(img.map(|v| v.powf(gamma)))
}

pub const DEFAULT_MASK_EPSILON_MM: f64 = 0.1;

/// Pixels whose metal path length exceeds `epsilon_mm`.
pub fn metal_mask(metal_thickness: &Image, epsilon_mm: f64) -> Mask {
    Mask {
        width: metal_thickness.width,
        height: metal_thickness.height,
        data: metal_thickness.data.iter().map(|&t| t > epsilon_mm).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_bin_model(mu_over_rho: f64) -> MaterialModel {
        let mut m = MaterialModel::default().with_spectrum(Spectrum::monochromatic(60.0).unwrap());
        m.tables[Material::Bone as usize] =
            AttenuationTable::new(vec![10.0, 150.0], vec![mu_over_rho * 1.0001, mu_over_rho * 0.9999]).unwrap();
        m
    }

    #[test]
    fn thresholds_follow_decomposition() {
        assert_eq!(Material::from_hu(-1000.0), Material::Air);
        assert_eq!(Material::from_hu(-800.1), Material::Air);
        assert_eq!(Material::from_hu(-800.0), Material::SoftTissue);
        assert_eq!(Material::from_hu(0.0), Material::SoftTissue);
        assert_eq!(Material::from_hu(350.0), Material::SoftTissue);
        assert_eq!(Material::from_hu(350.01), Material::Bone);
        assert_eq!(Material::from_hu(1000.0), Material::Bone);
        assert_eq!(Material::from_hu(2000.0), Material::Bone);
        assert_eq!(Material::from_hu(2000.5), Material::Metal);
        assert_eq!(Material::from_hu(5000.0), Material::Metal);
    }

    #[test]
    fn bundled_tables_are_valid() {
        let m = MaterialModel::default();
        m.validate().unwrap();
        assert_eq!(m.spectrum.bins.len(), 20);
        let total: f64 = m.spectrum.bins.iter().map(|b| b.1).sum();
        assert!((total - 1.0).abs() < 1e-9);
        for t in &m.tables {
            assert_eq!(t.range_kev(), (10.0, 150.0));
        }
        // Water at 60 keV is 0.2059 cm²/g.
        assert!((m.mu_water_per_mm(60.0).unwrap() - 0.02059).abs() < 1e-12);
    }

    #[test]
    fn loglog_interpolation_is_exact_on_power_laws() {
        // μ/ρ = 100 E^-2 is linear in log-log space.
        let e = vec![10.0, 20.0, 40.0, 80.0];
        let m: Vec<f64> = e.iter().map(|x: &f64| 100.0 / (x * x)).collect();
        let t = AttenuationTable::new(e, m).unwrap();
        for x in [10.0, 13.7, 25.0, 61.2, 80.0] {
            assert!((t.at(x).unwrap() - 100.0 / (x * x)).abs() < 1e-12);
        }
        assert!(t.at(9.9).is_err());
        assert!(t.at(80.1).is_err());
    }

    #[test]
    fn table_and_spectrum_validation() {
        assert!(AttenuationTable::new(vec![10.0, 20.0], vec![1.0, 2.0]).is_err());
        assert!(AttenuationTable::new(vec![20.0, 10.0], vec![2.0, 1.0]).is_err());
        assert!(AttenuationTable::new(vec![10.0, 20.0], vec![1.0, 0.0]).is_err());
        assert!(Spectrum::new(vec![(50.0, 0.5)]).is_err());
        assert!(Spectrum::new(vec![(50.0, 1.5), (60.0, -0.5)]).is_err());
        assert!(AttenuationTable::from_csv("energy,mu\n10,1\n").is_err());
        let s = Spectrum::from_csv("energy_keV,weight\n40,2\n60,6\n").unwrap();
        assert_eq!(s.bins, vec![(40.0, 0.25), (60.0, 0.75)]);
    }

    #[test]
    fn density_map_knots() {
        let d = DensityMap::default();
        assert!((d.density(0.0) - 1.0).abs() < 1e-12);
        assert!((d.density(1500.0) - 1.92).abs() < 1e-6);
        assert!((d.density(-1000.0) - 0.0012).abs() < 1e-12);
        assert_eq!(d.density(5000.0), 4.5);
        assert!((d.density(750.0) - 1.46).abs() < 1e-6);
        assert!(d.density(-3000.0) >= 0.0);
    }

    #[test]
    fn polychromatic_empty_path_is_one() {
        let m = MaterialModel::default();
        let zero = Image::filled(3, 2, 0.0);
        let out = polychromatic_intensity(&[zero.clone(), zero.clone(), zero.clone(), zero], &m).unwrap();
        assert!(out.data.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn polychromatic_single_bin_is_beer_lambert() {
        let m = one_bin_model(0.3);
        let zero = Image::filled(1, 1, 0.0);
        let bone = Image::filled(1, 1, 2.5);
        let out = polychromatic_intensity(&[zero.clone(), zero.clone(), bone, zero], &m).unwrap();
        let mu = m.table(Material::Bone).at(60.0).unwrap();
        assert!((out.data[0] - (-mu * 2.5).exp()).abs() < 1e-15);
    }

    #[test]
    fn polychromatic_two_bins_by_hand() {
        // Two bins with (μ/ρ)·a = 0.1 and 1.0 for a = 1 g/cm².
        let mut m = MaterialModel::default().with_spectrum(Spectrum::new(vec![(20.0, 0.5), (80.0, 0.5)]).unwrap());
        m.tables[Material::Metal as usize] = AttenuationTable::new(vec![20.0, 80.0], vec![1.0, 0.1]).unwrap();
        let zero = Image::filled(1, 1, 0.0);
        let metal = Image::filled(1, 1, 1.0);
        let out = polychromatic_intensity(&[zero.clone(), zero.clone(), zero, metal], &m).unwrap();
        assert!((out.data[0] - 0.636_358_43).abs() < 1e-8, "{}", out.data[0]);
    }

    #[test]
    fn polychromatic_rejects_negative_and_is_monotone() {
        let m = MaterialModel::default();
        let z = Image::filled(1, 1, 0.0);
        let neg = Image::filled(1, 1, -0.1);
        assert!(polychromatic_intensity(&[z.clone(), z.clone(), neg, z.clone()], &m).is_err());
        let mut prev = 1.0;
        for k in 1..20 {
            let a = Image::filled(1, 1, 0.05 * k as f64);
            let out = polychromatic_intensity(&[z.clone(), a, z.clone(), z.clone()], &m).unwrap();
            assert!(out.data[0] < prev);
            prev = out.data[0];
        }
    }

    #[test]
    fn poisson_high_dose_is_close() {
        let img = Image::filled(100, 100, 0.5);
        let noisy = add_poisson_noise(&img, 1e7, 3).unwrap();
        let close = noisy.data.iter().filter(|&&v| ((v - 0.5) / 0.5).abs() < 0.002).count();
        assert!(close as f64 / 1e4 >= 0.99, "{close}");
    }

    #[test]
    fn poisson_moments_at_lambda_1000() {
        let n = 100_000usize;
        let img = Image::filled(n, 1, 0.01);
        let noisy = add_poisson_noise(&img, 1e5, 99).unwrap();
        let counts: Vec<f64> = noisy.data.iter().map(|v| v * 1e5).collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sigma_mean = (1000.0 / n as f64).sqrt();
        assert!((mean - 1000.0).abs() < 3.0 * sigma_mean, "mean {mean}");
        assert!((var - 1000.0).abs() / 1000.0 < 0.05, "var {var}");
    }

    #[test]
    fn poisson_is_reproducible_and_clamps_zero_counts() {
        let img = Image::filled(8, 8, 1e-6);
        let a = add_poisson_noise(&img, 10.0, 1).unwrap();
        let b = add_poisson_noise(&img, 10.0, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|&v| v == 0.05));
        let c = add_poisson_noise(&Image::filled(8, 8, 0.5), 100.0, 2).unwrap();
        assert_ne!(c, add_poisson_noise(&Image::filled(8, 8, 0.5), 100.0, 3).unwrap());
        assert!(add_poisson_noise(&img, 0.5, 1).is_err());
        assert!(add_poisson_noise(&Image::filled(1, 1, 0.0), 10.0, 1).is_err());
    }

    #[test]
    fn poisson_does_not_depend_on_thread_count() {
        let img = Image::new(64, 64, (0..4096).map(|i| 0.01 + (i as f64) / 4200.0).collect()).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| add_poisson_noise(&img, 1e4, 8).unwrap());
        let b = four.install(|| add_poisson_noise(&img, 1e4, 8).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn log_normalize_cases() {
        let flat = log_normalize(&Image::filled(4, 4, 1.0)).unwrap();
        assert!(flat.data.iter().all(|&v| v == 0.0));
        let two = log_normalize(&Image::new(2, 1, vec![1.0, (-2.0f64).exp()]).unwrap()).unwrap();
        assert_eq!(two.data[0], 0.0);
        assert!((two.data[1] - 1.0).abs() < 1e-15);
        assert!(log_normalize(&Image::new(2, 1, vec![1.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn min_max_ignores_positive_affine_maps() {
        let p = Image::new(5, 1, vec![0.3, 1.2, -0.4, 2.0, 0.0]).unwrap();
        let q = p.map(|v| 3.5 * v + 7.0);
        let (a, b) = (min_max_normalize(&p), min_max_normalize(&q));
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_cases() {
        let img = Image::new(4, 1, vec![0.0, 0.25, 0.6, 1.0]).unwrap();
        assert_eq!(gamma_adjust(&img, 1.0).unwrap(), img);
        assert!((gamma_adjust(&img, 0.5).unwrap().data[1] - 0.5).abs() < 1e-15);
        for g in [0.7, 0.9, 1.3, 2.0] {
            let out = gamma_adjust(&img, g).unwrap();
            assert_eq!(out.data[0], 0.0);
            assert_eq!(out.data[3], 1.0);
        }
        assert!(gamma_adjust(&img, 0.0).is_err());
        assert!(gamma_adjust(&img, -1.0).is_err());
    }

    #[test]
    fn mask_threshold() {
        let t = Image::new(4, 1, vec![0.0, 0.1, 0.11, 5.0]).unwrap();
        assert_eq!(metal_mask(&t, 0.1).data, vec![false, false, true, true]);
        assert_eq!(metal_mask(&Image::filled(3, 3, 0.0), 0.1).count(), 0);
        assert!(metal_mask(&t, 1.0).count() <= metal_mask(&t, 0.1).count());
    }

    #[test]
    fn augmentation_validation() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let bad = AugmentationConfig {
            gamma_range: [1.3, 0.7],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentationConfig {
            photons_per_pixel: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
