//! MIMO-OFDM channel synthesis over a 2-D scene.
//!
//! A path set is traced geometrically (direct path + first-order specular
//! reflections via the image method), then turned into per-subcarrier array
//! responses h(f) = sum_i alpha_i e^{-j 2 pi f tau_i} a(theta_i) and stacked
//! into the N_t x N_c CSI matrix.

use crate::complexmat::{cadd, cexp_j, cmul, cscale, ComplexMatrix, C64};
use crate::error::{Error, Result};
use crate::scene::{segment_blocked, Point, Scene};
use serde::{Deserialize, Serialize};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Radio and array configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChannelConfig {
    /// BS antenna count (ULA).
    pub n_t: usize,
    /// Subcarrier count.
    pub n_c: usize,
    /// Carrier frequency, Hz.
    pub f_center: f64,
    /// Total bandwidth, Hz.
    pub bandwidth: f64,
    /// Antenna spacing, meters. Defaults to half the center wavelength.
    pub antenna_spacing: f64,
    /// Retained paths cap, strongest first.
    pub max_paths: usize,
    /// Amplitude factor applied once per bounce.
    pub reflection_coeff: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let f_center = 28e9;
        ChannelConfig {
            n_t: 16,
            n_c: 16,
            f_center,
            bandwidth: 50e6,
            antenna_spacing: SPEED_OF_LIGHT / (2.0 * f_center),
            max_paths: 5,
            reflection_coeff: 0.3,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 || self.n_c < 2 {
            return Err(Error::Config(format!("n_t and n_c must be >= 2, got {} / {}", self.n_t, self.n_c)));
        }
        if !(self.f_center > 0.0) {
            return Err(Error::Config("f_center must be positive".into()));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth < self.f_center) {
            return Err(Error::Config("bandwidth must be in (0, f_center)".into()));
        }
        if !(self.antenna_spacing > 0.0) {
            return Err(Error::Config("antenna_spacing must be positive".into()));
        }
        if self.max_paths == 0 {
            return Err(Error::Config("max_paths must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reflection_coeff) {
            return Err(Error::Config("reflection_coeff must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Subcarrier k frequency: f_center + (k - (n_c-1)/2) * bandwidth/(n_c-1).
    pub fn subcarrier(&self, k: usize) -> f64 {
        let step = self.bandwidth / (self.n_c - 1) as f64;
        self.f_center + (k as f64 - (self.n_c - 1) as f64 / 2.0) * step
    }

    pub fn subcarriers(&self) -> Vec<f64> {
        (0..self.n_c).map(|k| self.subcarrier(k)).collect()
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    /// Complex amplitude.
    pub alpha: C64,
    /// Propagation delay, seconds.
    pub tau: f64,
    /// Departure angle at the BS relative to the ULA axis, radians.
    pub theta: f64,
    /// Reflection count (0 = direct).
    pub bounces: u32,
}

/// Retained paths, sorted by descending |alpha|.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn has_direct(&self) -> bool {
        self.paths.iter().any(|p| p.bounces == 0)
    }

    /// Total received power: sum of |alpha_i|^2.
    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| crate::complexmat::cabs2(p.alpha)).sum()
    }
}

/// Free-space amplitude at distance d, attenuated by one reflection factor
/// per bounce: (c / (4 pi f d)) * gamma^bounces.
pub fn path_amplitude(distance: f64, bounces: u32, config: &ChannelConfig) -> f64 {
    let fspl = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * config.f_center * distance);
    fspl * config.reflection_coeff.powi(bounces as i32)
}

fn departure_angle(scene: &Scene, towards: Point) -> f64 {
    let dx = towards.x - scene.bs_pos.x;
    let dy = towards.y - scene.bs_pos.y;
    let bearing = dy.atan2(dx);
    // angle between departure direction and the ULA axis, in [0, pi]
    let mut rel = bearing - scene.bs_boresight;
    while rel > std::f64::consts::PI {
        rel -= 2.0 * std::f64::consts::PI;
    }
    while rel < -std::f64::consts::PI {
        rel += 2.0 * std::f64::consts::PI;
    }
    rel.abs()
}

fn make_path(distance: f64, theta: f64, bounces: u32, config: &ChannelConfig) -> Path {
    let tau = distance / SPEED_OF_LIGHT;
    let amp = path_amplitude(distance, bounces, config);
    let phase = -2.0 * std::f64::consts::PI * config.f_center * tau;
    Path { alpha: cscale(amp, cexp_j(phase)), tau, theta, bounces }
}

/// Trace the direct path and all first-order specular reflections.
///
/// The direct path exists iff the BS-UE segment is unobstructed. Reflections
/// come from mirroring the BS across each building edge line (image method):
/// a candidate survives if the reflection point lies strictly inside the
/// edge, BS and UE are both on the outward side of that edge, and both
/// sub-segments are unblocked. The strongest `max_paths` paths are kept,
/// sorted by descending |alpha|.
pub fn trace_paths(scene: &Scene, config: &ChannelConfig) -> Result<PathSet> {
    if scene.buildings.iter().any(|r| r.contains(scene.ue_pos)) {
        return Err(Error::Config("UE position inside a building".into()));
    }
    let bs = scene.bs_pos;
    let ue = scene.ue_pos;
    let mut paths: Vec<Path> = Vec::new();

    if !segment_blocked(bs, ue, &scene.buildings) {
        paths.push(make_path(bs.dist(ue), departure_angle(scene, ue), 0, config));
    }

    for rect in &scene.buildings {
        // (edge axis: 0 = vertical line x = c, 1 = horizontal line y = c;
        //  outward side below/left when `low` is true)
        let edges = [
            (0, rect.x_min, true),
            (0, rect.x_max, false),
            (1, rect.y_min, true),
            (1, rect.y_max, false),
        ];
        for (axis, line, low) in edges {
            let (bs_c, ue_c) = if axis == 0 { (bs.x, ue.x) } else { (bs.y, ue.y) };
            let outward = |c: f64| if low { c < line } else { c > line };
            if !outward(bs_c) || !outward(ue_c) {
                continue; // wall not facing both endpoints
            }
            // mirror the BS across the edge line
            let image = if axis == 0 {
                Point::new(2.0 * line - bs.x, bs.y)
            } else {
                Point::new(bs.x, 2.0 * line - bs.y)
            };
            // reflection point: image-UE segment crossing the edge line
            let (i_c, u_c) = if axis == 0 { (image.x, ue.x) } else { (image.y, ue.y) };
            let denom = u_c - i_c;
            if denom.abs() < 1e-300 {
                continue;
            }
            let t = (line - i_c) / denom;
            if !(t > 0.0 && t < 1.0) {
                continue;
            }
            let p = Point::new(image.x + t * (ue.x - image.x), image.y + t * (ue.y - image.y));
            // strictly within the edge segment extent
            let (lo, hi, p_c) = if axis == 0 {
                (rect.y_min, rect.y_max, p.y)
            } else {
                (rect.x_min, rect.x_max, p.x)
            };
            if !(p_c > lo && p_c < hi) {
                continue;
            }
            if segment_blocked(bs, p, &scene.buildings) || segment_blocked(p, ue, &scene.buildings) {
                continue;
            }
            let distance = bs.dist(p) + p.dist(ue);
            paths.push(make_path(distance, departure_angle(scene, p), 1, config));
        }
    }

    // strongest first; stable sort keeps deterministic order among equals
    paths.sort_by(|a, b| {
        crate::complexmat::cabs2(b.alpha)
            .partial_cmp(&crate::complexmat::cabs2(a.alpha))
            .unwrap()
    });
    paths.truncate(config.max_paths);
    Ok(PathSet { paths })
}

/// ULA steering vector: entry m = exp(-j beta m cos theta), beta = 2 pi d f / c.
pub fn steering_vector(theta: f64, f: f64, config: &ChannelConfig) -> Vec<C64> {
    let beta = 2.0 * std::f64::consts::PI * config.antenna_spacing * f / SPEED_OF_LIGHT;
    let phase_step = -beta * theta.cos();
    (0..config.n_t).map(|m| cexp_j(phase_step * m as f64)).collect()
}

/// h(f) = sum_i alpha_i e^{-j 2 pi f tau_i} a(theta_i). Empty paths give the
/// zero vector.
pub fn channel_response(paths: &PathSet, f: f64, config: &ChannelConfig) -> Vec<C64> {
    let mut h = vec![(0.0, 0.0); config.n_t];
    for p in &paths.paths {
        let rot = cmul(p.alpha, cexp_j(-2.0 * std::f64::consts::PI * f * p.tau));
        let a = steering_vector(p.theta, f, config);
        for (hm, am) in h.iter_mut().zip(a) {
            *hm = cadd(*hm, cmul(rot, am));
        }
    }
    h
}

/// CSI matrix: column k = h(f_k), with beta recomputed per subcarrier.
pub fn csi_matrix(paths: &PathSet, config: &ChannelConfig) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(config.n_t, config.n_c);
    for (k, f) in config.subcarriers().into_iter().enumerate() {
        let col = channel_response(paths, f, config);
        h.set_column(k, &col);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complexmat::cabs2;
    use crate::scene::Rect;

    fn empty_scene() -> Scene {
        Scene {
            side_length: 150.0,
            buildings: vec![],
            bs_pos: Point::new(20.0, 30.0),
            bs_boresight: 0.7,
            ue_pos: Point::new(120.0, 90.0),
        }
    }

    #[test]
    fn free_space_single_direct_path() {
        let scene = empty_scene();
        let cfg = ChannelConfig::default();
        let ps = trace_paths(&scene, &cfg).unwrap();
        assert_eq!(ps.paths.len(), 1);
        let p = ps.paths[0];
        assert_eq!(p.bounces, 0);
        let d = scene.bs_pos.dist(scene.ue_pos);
        assert!((p.tau - d / SPEED_OF_LIGHT).abs() < 1e-18);
    }

    #[test]
    fn occluded_direct_path_absent() {
        let mut scene = empty_scene();
        scene.bs_pos = Point::new(10.0, 75.0);
        scene.ue_pos = Point::new(140.0, 75.0);
        // wall square across the midpoint of the BS-UE segment
        scene.buildings = vec![Rect { x_min: 70.0, y_min: 60.0, x_max: 80.0, y_max: 90.0 }];
        let cfg = ChannelConfig::default();
        let ps = trace_paths(&scene, &cfg).unwrap();
        assert!(!ps.has_direct());
    }

    #[test]
    fn wall_reflection_length_matches_image_method() {
        // wall parallel to the BS-UE line
        let mut scene = empty_scene();
        scene.bs_pos = Point::new(40.0, 50.0);
        scene.ue_pos = Point::new(110.0, 50.0);
        scene.buildings = vec![Rect { x_min: 30.0, y_min: 80.0, x_max: 120.0, y_max: 95.0 }];
        let cfg = ChannelConfig::default();
        let ps = trace_paths(&scene, &cfg).unwrap();
        let refl: Vec<&Path> = ps.paths.iter().filter(|p| p.bounces == 1).collect();
        assert_eq!(refl.len(), 1, "one reflection off the facing wall");
        // image of BS across y = 80 is (40, 110); path length = |image - UE|
        let image = Point::new(40.0, 110.0);
        let expect = image.dist(scene.ue_pos);
        let got = refl[0].tau * SPEED_OF_LIGHT;
        assert!((got - expect).abs() < 1e-9, "got {got} expect {expect}");
    }

    #[test]
    fn bounce_multiplies_amplitude_by_gamma_exactly() {
        let cfg = ChannelConfig::default();
        let a0 = path_amplitude(123.0, 0, &cfg);
        let a1 = path_amplitude(123.0, 1, &cfg);
        let a2 = path_amplitude(123.0, 2, &cfg);
        assert_eq!(a1, a0 * cfg.reflection_coeff);
        assert_eq!(a2, a1 * cfg.reflection_coeff);
    }

    #[test]
    fn steering_vector_broadside_and_endfire() {
        let cfg = ChannelConfig::default();
        // broadside: cos(pi/2) = 0 -> all ones
        let a = steering_vector(std::f64::consts::FRAC_PI_2, cfg.f_center, &cfg);
        for v in &a {
            assert!((v.0 - 1.0).abs() < 1e-12 && v.1.abs() < 1e-12);
        }
        // endfire at d = lambda/2: entry m = (-1)^m
        let a = steering_vector(0.0, cfg.f_center, &cfg);
        for (m, v) in a.iter().enumerate() {
            let expect = if m % 2 == 0 { 1.0 } else { -1.0 };
            assert!((v.0 - expect).abs() < 1e-9, "m={m} v={v:?}");
            assert!(v.1.abs() < 1e-6);
        }
        // unit modulus entries, squared norm n_t
        let a = steering_vector(0.4, cfg.f_center, &cfg);
        let norm2: f64 = a.iter().map(|&v| cabs2(v)).sum();
        assert!((norm2 - cfg.n_t as f64).abs() < 1e-9);
        assert!(a.iter().all(|&v| (cabs2(v) - 1.0).abs() < 1e-12));
        assert_eq!(a[0], (1.0, 0.0));
    }

    #[test]
    fn channel_response_single_path_is_steering_vector() {
        let cfg = ChannelConfig::default();
        let ps = PathSet {
            paths: vec![Path { alpha: (1.0, 0.0), tau: 0.0, theta: 0.9, bounces: 0 }],
        };
        let h = channel_response(&ps, cfg.f_center, &cfg);
        let a = steering_vector(0.9, cfg.f_center, &cfg);
        for (x, y) in h.iter().zip(&a) {
            assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_response_empty_paths_zero() {
        let cfg = ChannelConfig::default();
        let h = channel_response(&PathSet::default(), cfg.f_center, &cfg);
        assert!(h.iter().all(|&v| v == (0.0, 0.0)));
        let m = csi_matrix(&PathSet::default(), &cfg);
        assert!(m.entries().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_period_delay_flips_phase() {
        let cfg = ChannelConfig::default();
        let f = cfg.f_center;
        let dtau = 1.0 / (2.0 * f);
        let p1 = Path { alpha: (1.0, 0.0), tau: 0.0, theta: 0.3, bounces: 0 };
        let p2 = Path { alpha: (1.0, 0.0), tau: dtau, theta: 1.2, bounces: 0 };
        let h = channel_response(&PathSet { paths: vec![p1, p2] }, f, &cfg);
        let a1 = steering_vector(0.3, f, &cfg);
        let a2 = steering_vector(1.2, f, &cfg);
        for i in 0..cfg.n_t {
            let expect = (a1[i].0 - a2[i].0, a1[i].1 - a2[i].1);
            assert!((h[i].0 - expect.0).abs() < 1e-9 && (h[i].1 - expect.1).abs() < 1e-9);
        }
    }

    #[test]
    fn csi_columns_are_per_subcarrier_responses() {
        let scene = empty_scene();
        let cfg = ChannelConfig::default();
        let ps = trace_paths(&scene, &cfg).unwrap();
        let m = csi_matrix(&ps, &cfg);
        for (k, f) in cfg.subcarriers().into_iter().enumerate() {
            let h = channel_response(&ps, f, &cfg);
            for (r, &v) in h.iter().enumerate() {
                assert_eq!(m.get(r, k), v);
            }
        }
        // delay > 0 makes columns differ
        let c0 = m.column(0);
        let c_last = m.column(cfg.n_c - 1);
        let diff: f64 = c0
            .iter()
            .zip(&c_last)
            .map(|(a, b)| cabs2((a.0 - b.0, a.1 - b.1)))
            .sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn subcarriers_strictly_increasing_and_centered() {
        let cfg = ChannelConfig::default();
        let fs = cfg.subcarriers();
        for w in fs.windows(2) {
            assert!(w[1] > w[0]);
        }
        let mid = (fs[0] + fs[cfg.n_c - 1]) / 2.0;
        assert!((mid - cfg.f_center).abs() < 1e-3);
        assert!((fs[cfg.n_c - 1] - fs[0] - cfg.bandwidth).abs() < 1e-6);
    }

    #[test]
    fn ue_inside_building_rejected() {
        let mut scene = empty_scene();
        scene.buildings = vec![Rect { x_min: 100.0, y_min: 80.0, x_max: 130.0, y_max: 100.0 }];
        scene.ue_pos = Point::new(110.0, 90.0);
        assert!(trace_paths(&scene, &ChannelConfig::default()).is_err());
    }
}
