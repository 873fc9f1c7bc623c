//! Teacher forcing and ridge-regression readout training.

use nalgebra::{Cholesky, DMatrix, Dyn, MatrixView, SymmetricEigen};

use crate::driver::Driver;
use crate::embed::Embedding;
use crate::error::{check_dim, Error, Result};
use crate::forecast::{ContinuousForecaster, EsnForecaster};
use crate::parallel::map_indices;
use crate::readout::LinearReadout;
use crate::rng::SeededRng;
use crate::series::{ForcedStates, ReservoirState, TimeSeries};

pub use crate::classify::train_classifier;
pub use crate::control::train_controller;

/// Default Tikhonov strength.
pub const DEFAULT_BETA: f64 = 1e-7;
/// Default number of transient steps discarded before regression.
pub const DEFAULT_SPINUP: usize = 200;

/// Ridge strength and transient length for readout training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeConfig {
    pub beta: f64,
    pub spinup: usize,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            spinup: DEFAULT_SPINUP,
        }
    }
}

impl RidgeConfig {
    pub fn new(beta: f64, spinup: usize) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("must be non-negative, got {beta}"),
            });
        }
        Ok(Self { beta, spinup })
    }
}

/// Drives the reservoir with `inputs` from `r0`. `states[t]` is the state
/// after consuming inputs `0..=t`.
pub fn force(embedding: &Embedding, driver: &Driver, inputs: &TimeSeries, r0: &ReservoirState) -> Result<ForcedStates> {
    let (chunks, n) = (driver.chunks(), driver.res_dim());
    check_dim("force input", embedding.in_dim(), inputs.dim())?;
    check_dim("force embedding chunks", chunks, embedding.chunks())?;
    check_dim("force embedding res_dim", n, embedding.res_dim())?;
    r0.check_shape("force initial state", chunks, n)?;
    let mut states = ForcedStates::with_capacity(inputs.len(), chunks, n);
    let mut r = r0.clone();
    let mut next = ReservoirState::zeros(chunks, n);
    let mut emb = vec![0.0; chunks * n];
    let mut scratch = Vec::new();
    for (t, u) in inputs.rows().enumerate() {
        embedding.embed_into(u, &mut scratch, &mut emb)?;
        driver.advance_into(&r, &emb, &mut next)?;
        if !next.is_finite() {
            return Err(Error::NonFiniteState { step: t });
        }
        std::mem::swap(&mut r, &mut next);
        states.push(&r);
    }
    Ok(states)
}

/// Solves `min ||X W^T - Y||_F^2 + beta ||W||_F^2` for `W` (`G x F`).
///
/// `x` is `N x F` and `y` is `N x G`, both row-major. Returns `W` row-major.
pub fn ridge_regression(x: &[f64], y: &[f64], rows: usize, features: usize, outputs: usize, beta: f64) -> Result<Vec<f64>> {
    if rows == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    check_dim("ridge X", rows * features, x.len())?;
    check_dim("ridge Y", rows * outputs, y.len())?;
    let xv = MatrixView::from_slice_with_strides_generic(x, Dyn(rows), Dyn(features), Dyn(features), Dyn(1));
    let yv = MatrixView::from_slice_with_strides_generic(y, Dyn(rows), Dyn(outputs), Dyn(outputs), Dyn(1));
    let w = ridge_views(xv, yv, beta)?;
    Ok(row_major(&w))
}

type StridedView<'a> = MatrixView<'a, f64, Dyn, Dyn, Dyn, Dyn>;

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Ridge solve on strided views; returns `W` as a `G x F` matrix.
fn ridge_views(x: StridedView<'_>, y: StridedView<'_>, beta: f64) -> Result<DMatrix<f64>> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "beta",
            reason: format!("must be non-negative, got {beta}"),
        });
    }
    let f = x.ncols();
    let xt = x.transpose();
    let mut gram = &xt * xt.transpose();
    let rhs = &xt * y;
    for i in 0..f {
        gram[(i, i)] += beta;
    }
    let scale = gram.diagonal().amax();
    if scale == 0.0 {
        // X = 0 and beta = 0
        return Err(Error::SingularSystem);
    }
    let threshold = scale * f as f64 * f64::EPSILON;
    if let Some(chol) = Cholesky::new(gram.clone()) {
        let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
        if beta > 0.0 || min_pivot > threshold {
            return Ok(chol.solve(&rhs).transpose());
        }
    }
    let eig = SymmetricEigen::new(gram);
    let min_eig = eig.eigenvalues.min();
    if min_eig <= threshold {
        if beta == 0.0 || min_eig <= 0.0 {
            return Err(Error::SingularSystem);
        }
    }
    let mut proj = eig.eigenvectors.tr_mul(&rhs);
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        proj.row_mut(i).scale_mut(1.0 / lambda);
    }
    Ok((&eig.eigenvectors * proj).transpose())
}

/// Regresses each chunk's states onto its center segment of `targets`.
///
/// `state_rows` selects rows of `states`; `targets` rows are aligned
/// one-to-one with the selected state rows.
fn fit_chunked_readout(
    states: &ForcedStates,
    state_rows: std::ops::Range<usize>,
    targets: &TimeSeries,
    target_rows: std::ops::Range<usize>,
    out_dim: usize,
    beta: f64,
    batch: Option<usize>,
) -> Result<LinearReadout> {
    let (chunks, n) = (states.chunks(), states.res_dim());
    let rows = state_rows.len();
    debug_assert_eq!(rows, target_rows.len());
    let mut readout = LinearReadout::zeros(out_dim, n, chunks)?;
    let per = readout.out_per_chunk();
    let d = targets.dim();
    let state_data = states.as_slice();
    let target_data = targets.values();
    let fit = |c: usize| -> Result<DMatrix<f64>> {
        let x_off = state_rows.start * chunks * n + c * n;
        let xv = MatrixView::from_slice_with_strides_generic(
            &state_data[x_off..],
            Dyn(rows),
            Dyn(n),
            Dyn(chunks * n),
            Dyn(1),
        );
        let y_off = target_rows.start * d + c * per;
        let yv = MatrixView::from_slice_with_strides_generic(&target_data[y_off..], Dyn(rows), Dyn(per), Dyn(d), Dyn(1));
        ridge_views(xv, yv, beta)
    };
    let group = batch.unwrap_or(chunks).max(1);
    for start in (0..chunks).step_by(group) {
        let end = (start + group).min(chunks);
        let solved = map_indices(end - start, |i| fit(start + i));
        for (i, w) in solved.into_iter().enumerate() {
            readout.chunk_weights_mut(start + i).copy_from_slice(&row_major(&w?));
        }
    }
    Ok(readout)
}

fn check_train_len(len: usize, spinup: usize) -> Result<()> {
    if len < spinup + 2 {
        return Err(Error::TooShort {
            needed: spinup + 2,
            got: len,
        });
    }
    Ok(())
}

/// Trains the readout for one-step-ahead prediction.
///
/// The reservoir is forced from zero over all of `train_seq`; states
/// `spinup..T-1` are regressed onto inputs `spinup+1..T`, chunk by chunk.
/// `batch` bounds how many chunk regressions are in flight at once. The
/// returned states cover every training step, so the last one is the
/// starting point for a forecast of the step after `train_seq`.
pub fn train_forecaster(
    model: &EsnForecaster,
    train_seq: &TimeSeries,
    cfg: RidgeConfig,
    batch: Option<usize>,
) -> Result<(EsnForecaster, ForcedStates)> {
    check_dim("train_forecaster input", model.data_dim(), train_seq.dim())?;
    check_train_len(train_seq.len(), cfg.spinup)?;
    let r0 = ReservoirState::zeros(model.chunks(), model.res_dim());
    let states = force(model.embedding(), model.driver(), train_seq, &r0)?;
    let t = train_seq.len();
    let readout = fit_chunked_readout(
        &states,
        cfg.spinup..t - 1,
        train_seq,
        cfg.spinup + 1..t,
        model.data_dim(),
        cfg.beta,
        batch,
    )?;
    Ok((model.with_readout(readout)?, states))
}

/// Continuous-time analogue of [`train_forecaster`]; the reservoir ODE is
/// driven by a cubic Hermite interpolant of `train_seq`, which must carry a
/// sampling interval.
pub fn train_continuous_forecaster(
    model: &ContinuousForecaster,
    train_seq: &TimeSeries,
    cfg: RidgeConfig,
    batch: Option<usize>,
) -> Result<(ContinuousForecaster, ForcedStates)> {
    check_train_len(train_seq.len(), cfg.spinup)?;
    let r0 = ReservoirState::zeros(model.chunks(), model.res_dim());
    let states = model.force(train_seq, &r0)?;
    let t = train_seq.len();
    let readout = fit_chunked_readout(
        &states,
        cfg.spinup..t - 1,
        train_seq,
        cfg.spinup + 1..t,
        model.data_dim(),
        cfg.beta,
        batch,
    )?;
    Ok((model.with_readout(readout)?, states))
}

/// Regresses `features` (`rows x F`) onto `targets` (`rows x G`) into a
/// single-chunk readout.
pub(crate) fn fit_dense_readout(features: &[f64], targets: &[f64], rows: usize, res_dim: usize, out_dim: usize, beta: f64) -> Result<LinearReadout> {
    let w = ridge_regression(features, targets, rows, res_dim, out_dim, beta)?;
    LinearReadout::from_weights(out_dim, res_dim, 1, w)
}

/// Adds Gaussian noise with standard deviation `fraction * std(seq)` to every
/// entry.
pub fn add_noise(seq: &TimeSeries, fraction: f64, rng: &mut SeededRng) -> Result<TimeSeries> {
    let sigma = fraction * seq.std();
    let mut noise = vec![0.0; seq.values().len()];
    rng.fill_normal(&mut noise);
    let values = seq.values().iter().zip(noise).map(|(v, z)| v + sigma * z).collect();
    TimeSeries::new(values, seq.dim(), seq.dt(), seq.t0())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::LeakyEsnDriver;
    use crate::embed::{make_linear_embedding, ChunkLayout, LinearEmbedding};
    use crate::rng::{seeded_rng, RngSpec};

    fn inverse_oracle(x: &[f64], y: &[f64], n: usize, f: usize, g: usize, beta: f64) -> DMatrix<f64> {
        let xm = DMatrix::from_row_slice(n, f, x);
        let ym = DMatrix::from_row_slice(n, g, y);
        let a = xm.transpose() * &xm + DMatrix::identity(f, f) * beta;
        ym.transpose() * &xm * a.try_inverse().unwrap()
    }

    #[test]
    fn identity_interpolation() {
        let n = 4;
        let eye: Vec<f64> = (0..n * n).map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let w = ridge_regression(&eye, &eye, n, n, n, 0.0).unwrap();
        for (a, b) in w.iter().zip(&eye) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn heavy_regularisation_shrinks() {
        let mut rng = seeded_rng(RngSpec::new(1));
        let mut x = vec![0.0; 30];
        let mut y = vec![0.0; 20];
        rng.fill_normal(&mut x);
        rng.fill_normal(&mut y);
        let w = ridge_regression(&x, &y, 10, 3, 2, 1e12).unwrap();
        let xm = DMatrix::from_row_slice(10, 3, &x);
        let ym = DMatrix::from_row_slice(10, 2, &y);
        let yx = (ym.transpose() * xm).amax();
        assert!(w.iter().fold(0.0f64, |a, b| a.max(b.abs())) < 1e-9 * yx);
    }

    #[test]
    fn small_instance_matches_inverse_oracle() {
        let mut rng = seeded_rng(RngSpec::new(2));
        let mut x = vec![0.0; 18];
        let mut y = vec![0.0; 12];
        rng.fill_normal(&mut x);
        rng.fill_normal(&mut y);
        let w = ridge_regression(&x, &y, 6, 3, 2, 1e-3).unwrap();
        let oracle = inverse_oracle(&x, &y, 6, 3, 2, 1e-3);
        for i in 0..2 {
            for j in 0..3 {
                assert!((w[i * 3 + j] - oracle[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_deficient_without_regularisation_is_reported() {
        let x = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
        let y = [1.0, 2.0, 3.0];
        assert!(matches!(ridge_regression(&x, &y, 3, 2, 1, 0.0), Err(Error::SingularSystem)));
        assert!(ridge_regression(&x, &y, 3, 2, 1, 1e-6).is_ok());
        assert!(matches!(ridge_regression(&[0.0; 4], &[1.0; 2], 2, 2, 1, 0.0), Err(Error::SingularSystem)));
    }

    #[test]
    fn ridge_is_first_order_optimal() {
        let mut rng = seeded_rng(RngSpec::new(3));
        let (n, f, g, beta) = (12, 4, 2, 0.1);
        let mut x = vec![0.0; n * f];
        let mut y = vec![0.0; n * g];
        rng.fill_normal(&mut x);
        rng.fill_normal(&mut y);
        let w = ridge_regression(&x, &y, n, f, g, beta).unwrap();
        let objective = |w: &[f64]| {
            let mut acc = 0.0;
            for r in 0..n {
                for k in 0..g {
                    let p: f64 = (0..f).map(|j| x[r * f + j] * w[k * f + j]).sum();
                    acc += (p - y[r * g + k]).powi(2);
                }
            }
            acc + beta * w.iter().map(|v| v * v).sum::<f64>()
        };
        let base = objective(&w);
        for i in 0..w.len() {
            for eps in [1e-4, -1e-4] {
                let mut p = w.clone();
                p[i] += eps;
                assert!(objective(&p) > base);
            }
        }
    }

    fn small_model(res_dim: usize, leak: f64, seed: u64) -> EsnForecaster {
        let rng = seeded_rng(RngSpec::new(seed));
        let emb = make_linear_embedding(3, res_dim, 1, 0, 0.5, &rng).unwrap();
        let drv = LeakyEsnDriver::random(1, res_dim, leak, 0.8, 0.5, &rng).unwrap();
        EsnForecaster::untrained(emb.into(), drv.into()).unwrap()
    }

    fn ramp_series(len: usize) -> TimeSeries {
        let vals = (0..len * 3).map(|i| ((i as f64) * 0.37).sin()).collect();
        TimeSeries::new(vals, 3, Some(0.1), 0.0).unwrap()
    }

    #[test]
    fn force_single_step_and_identity() {
        let m = small_model(8, 0.5, 4);
        let seq = ramp_series(1);
        let r0 = ReservoirState::zeros(1, 8);
        let states = force(m.embedding(), m.driver(), &seq, &r0).unwrap();
        let direct = m.driver().advance(&r0, &m.embedding().embed(seq.row(0)).unwrap()).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states.state(0), direct);

        let frozen = small_model(8, 0.0, 4);
        let mut r0 = ReservoirState::zeros(1, 8);
        r0.as_mut_slice()[3] = 0.25;
        let states = force(frozen.embedding(), frozen.driver(), &ramp_series(5), &r0).unwrap();
        for t in 0..5 {
            assert_eq!(states.state(t), r0);
        }
    }

    #[test]
    fn force_matches_unrolled_loop() {
        let m = small_model(8, 0.4, 5);
        let seq = ramp_series(5);
        let states = force(m.embedding(), m.driver(), &seq, &ReservoirState::zeros(1, 8)).unwrap();
        let w = match m.driver() {
            Driver::Esn(d) => d.weights().reservoir(0).to_dense(),
            _ => unreachable!(),
        };
        let win = match m.embedding() {
            Embedding::Linear(e) => e.weights().to_vec(),
            _ => unreachable!(),
        };
        let bias = match m.driver() {
            Driver::Esn(d) => d.weights().bias(0).to_vec(),
            _ => unreachable!(),
        };
        let mut r = [0.0; 8];
        for t in 0..5 {
            let u = seq.row(t);
            let mut next = [0.0; 8];
            for i in 0..8 {
                let mut pre = bias[i];
                for j in 0..8 {
                    pre += w[i * 8 + j] * r[j];
                }
                for k in 0..3 {
                    pre += win[i * 3 + k] * u[k];
                }
                next[i] = 0.6 * r[i] + 0.4 * pre.tanh();
            }
            r = next;
            for i in 0..8 {
                assert!((states.state_slice(t)[i] - r[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batched_training_matches_unbatched() {
        let rng = seeded_rng(RngSpec::new(6));
        let layout = ChunkLayout::new(8, 4, 1).unwrap();
        let emb = LinearEmbedding::random(layout, 20, 0.3, &rng).unwrap();
        let drv = LeakyEsnDriver::random(4, 20, 0.6, 0.8, 0.5, &rng).unwrap();
        let model = EsnForecaster::untrained(emb.into(), drv.into()).unwrap();
        let vals = (0..300 * 8).map(|i| ((i % 8) as f64 * 0.7 + (i / 8) as f64 * 0.05).sin()).collect();
        let seq = TimeSeries::new(vals, 8, Some(0.1), 0.0).unwrap();
        let cfg = RidgeConfig::new(1e-6, 20).unwrap();
        let (a, _) = train_forecaster(&model, &seq, cfg, None).unwrap();
        let (b, _) = train_forecaster(&model, &seq, cfg, Some(1)).unwrap();
        let (c, _) = train_forecaster(&model, &seq, cfg, Some(3)).unwrap();
        assert_eq!(a.readout(), b.readout());
        assert_eq!(a.readout(), c.readout());
    }

    #[test]
    fn too_short_training_rejected() {
        let m = small_model(8, 0.5, 7);
        let cfg = RidgeConfig::new(1e-6, 10).unwrap();
        assert!(matches!(
            train_forecaster(&m, &ramp_series(11), cfg, None),
            Err(Error::TooShort { needed: 12, got: 11 })
        ));
    }

    #[test]
    fn noise_has_requested_scale() {
        let seq = ramp_series(2000);
        let mut rng = seeded_rng(RngSpec::new(8));
        let noisy = add_noise(&seq, 0.03, &mut rng).unwrap();
        let diff: Vec<f64> = noisy.values().iter().zip(seq.values()).map(|(a, b)| a - b).collect();
        let sd = (diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64).sqrt();
        assert!((sd / (0.03 * seq.std()) - 1.0).abs() < 0.05);
    }
}
