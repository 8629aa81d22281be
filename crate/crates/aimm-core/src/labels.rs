//! Ground-truth labels for the five downstream tasks.

use crate::channel::{ChannelConfig, PathSet};
use crate::complexmat::{cabs2, cmul, conj, dft_codebook, svd_principal, ComplexMatrix, C64};
use crate::error::{Error, Result};
use crate::scene::Scene;

/// Labels for one sample, computed in f64 before storage quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    /// UE position, meters.
    pub position: (f64, f64),
    /// Direct path present.
    pub los: bool,
    /// -10 log10(sum |alpha_i|^2) over retained paths, dB.
    pub path_loss_db: f64,
    /// Principal left singular vector of the CSI matrix, unit norm.
    pub precoder: Vec<C64>,
    /// Best wideband DFT beam: argmax_k sum_f |c_k^H h(f)|^2, lowest index on ties.
    pub beam_index: usize,
}

/// Compute all five labels. Outage (empty path set) is an error; such
/// samples are regenerated upstream.
pub fn make_labels(
    scene: &Scene,
    paths: &PathSet,
    csi: &ComplexMatrix,
    config: &ChannelConfig,
) -> Result<Labels> {
    if paths.is_empty() {
        return Err(Error::Outage);
    }
    let position = (scene.ue_pos.x, scene.ue_pos.y);
    let los = paths.has_direct();
    let path_loss_db = -10.0 * paths.total_power().log10();
    let (_sigma, precoder, _v) = svd_principal(csi)?;
    let beam_index = best_beam_index(csi, config)?;
    Ok(Labels { position, los, path_loss_db, precoder, beam_index })
}

/// Codebook-matmul beam selection: G = C^H H, score_k = sum_f |G[k,f]|^2.
pub fn best_beam_index(csi: &ComplexMatrix, config: &ChannelConfig) -> Result<usize> {
    let codebook = dft_codebook(config.n_t)?;
    let g = codebook.adjoint_mul(csi)?;
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for k in 0..config.n_t {
        let mut score = 0.0;
        for f in 0..config.n_c {
            score += cabs2(g.get(k, f));
        }
        if score > best_score {
            best_score = score;
            best = k;
        }
    }
    Ok(best)
}

/// Test/acceptance oracle: exhaustive double loop over beams and
/// subcarriers with its own inline complex arithmetic. Accumulation order
/// (antennas ascending, then subcarriers ascending) matches the production
/// path, so agreement is exact.
pub fn best_beam_brute_force(csi: &ComplexMatrix, config: &ChannelConfig) -> Result<usize> {
    let codebook = dft_codebook(config.n_t)?;
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for k in 0..config.n_t {
        let mut score = 0.0;
        for f in 0..config.n_c {
            let mut acc = (0.0f64, 0.0f64);
            for m in 0..config.n_t {
                acc = crate::complexmat::cadd(acc, cmul(conj(codebook.get(m, k)), csi.get(m, f)));
            }
            score += acc.0 * acc.0 + acc.1 * acc.1;
        }
        if score > best_score {
            best_score = score;
            best = k;
        }
    }
    Ok(best)
}

/// Analytic free-space path loss in dB: 20 log10(4 pi f d / c).
pub fn fspl_db(f: f64, distance: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * f * distance / crate::channel::SPEED_OF_LIGHT).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{csi_matrix, steering_vector, trace_paths};
    use crate::complexmat::vec_dot_adjoint;
    use crate::scene::Point;

    #[test]
    fn free_space_path_loss_matches_fspl_oracle() {
        // single path at 100 m, 28 GHz: about 101.4 dB
        let mut scene = crate::scene::Scene {
            side_length: 150.0,
            buildings: vec![],
            bs_pos: Point::new(10.0, 10.0),
            bs_boresight: 0.0,
            ue_pos: Point::new(110.0, 10.0),
        };
        scene.ue_pos = Point::new(10.0 + 100.0, 10.0);
        let cfg = ChannelConfig::default();
        let ps = trace_paths(&scene, &cfg).unwrap();
        let csi = csi_matrix(&ps, &cfg);
        let labels = make_labels(&scene, &ps, &csi, &cfg).unwrap();
        let expect = fspl_db(cfg.f_center, 100.0);
        assert!((labels.path_loss_db - expect).abs() < 1e-6, "{} vs {}", labels.path_loss_db, expect);
        assert!((expect - 101.4).abs() < 0.05, "sanity: fspl(28 GHz, 100 m) ~ 101.4 dB");
        assert!(labels.los);
        assert_eq!(labels.position, (110.0, 10.0));
    }

    #[test]
    fn single_path_precoder_matches_steering_direction() {
        // near-zero bandwidth makes the CSI exactly rank-1 across subcarriers
        let cfg = ChannelConfig { bandwidth: 1.0, ..ChannelConfig::default() };
        let scene = crate::scene::Scene {
            side_length: 150.0,
            buildings: vec![],
            bs_pos: Point::new(20.0, 20.0),
            bs_boresight: 0.3,
            ue_pos: Point::new(100.0, 70.0),
        };
        let ps = trace_paths(&scene, &cfg).unwrap();
        assert_eq!(ps.paths.len(), 1);
        let csi = csi_matrix(&ps, &cfg);
        let labels = make_labels(&scene, &ps, &csi, &cfg).unwrap();
        let a = steering_vector(ps.paths[0].theta, cfg.f_center, &cfg);
        let norm = (cfg.n_t as f64).sqrt();
        let unit_a: Vec<_> = a.iter().map(|&v| (v.0 / norm, v.1 / norm)).collect();
        // up to phase: |<precoder, a/||a||>| = 1
        let align = cabs2(vec_dot_adjoint(&labels.precoder, &unit_a)).sqrt();
        assert!(align > 1.0 - 1e-9, "alignment {align}");
        // unit norm
        let n: f64 = labels.precoder.iter().map(|&v| cabs2(v)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn beam_label_equals_brute_force_oracle() {
        let cfg = ChannelConfig::default();
        for area in 0..50u64 {
            let scene = crate::scene::generate_scene(3, area);
            let ps = trace_paths(&scene, &cfg).unwrap();
            if ps.is_empty() {
                continue;
            }
            let csi = csi_matrix(&ps, &cfg);
            let a = best_beam_index(&csi, &cfg).unwrap();
            let b = best_beam_brute_force(&csi, &cfg).unwrap();
            assert_eq!(a, b, "area {area}");
        }
    }

    #[test]
    fn outage_is_an_error() {
        let cfg = ChannelConfig::default();
        let scene = crate::scene::generate_scene(3, 0);
        let csi = csi_matrix(&PathSet::default(), &cfg);
        assert!(matches!(
            make_labels(&scene, &PathSet::default(), &csi, &cfg),
            Err(Error::Outage)
        ));
    }
}
