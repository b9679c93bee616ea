//! Python bindings for the `alff` crate.

use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use alff::checkpoint::Checkpoint;
use alff::config::RunConfig;
use alff::data::{make_split as make_split_rs, Dataset, Profile};
use alff::detector::{postprocess, Detection, Model, ModelPreset};
use alff::evaluation::{self, Density};
use alff::geometry::{self, GridSpec};
use alff::losses::{self, BinDistribution, NoiseConfig, NoiseMode};
use alff::nn::Parameterized;
use alff::train::{evaluate, train as train_rs};
use alff::{Error, Tensor3};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type Corners = (f64, f64, f64, f64);

/// Axis-aligned box `(x1, y1, x2, y2)` in pixels.
#[pyclass(name = "BBox", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyBBox {
    inner: geometry::BBox,
}

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> PyResult<Self> {
        Ok(Self {
            inner: geometry::BBox::new(x1, y1, x2, y2).map_err(py_err)?,
        })
    }

    #[getter]
    fn corners(&self) -> Corners {
        let [a, b, c, d] = self.inner.corners();
        (a, b, c, d)
    }

    #[getter]
    fn center(&self) -> (f64, f64) {
        geometry::center_of(&self.inner)
    }

    #[getter]
    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn iou(&self, other: &PyBBox) -> f64 {
        losses::iou(&self.inner, &other.inner)
    }

    fn __repr__(&self) -> String {
        let (a, b, c, d) = self.corners();
        format!("BBox({a}, {b}, {c}, {d})")
    }
}

fn to_boxes(raw: &[Corners]) -> PyResult<Vec<geometry::BBox>> {
    raw.iter()
        .map(|&(a, b, c, d)| geometry::BBox::new(a, b, c, d).map_err(py_err))
        .collect()
}

fn rows(t: &Tensor3) -> Vec<Vec<f64>> {
    t.channel(0).chunks(t.width()).map(<[f64]>::to_vec).collect()
}

/// Truncated-Gaussian heatmap target; returns `(rows, sigmas)`.
#[pyfunction]
fn render_heatmap(boxes: Vec<Corners>, image_w: usize, image_h: usize, stride: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let spec = GridSpec::new(image_w, image_h, stride).map_err(py_err)?;
    let t = geometry::render_heatmap(&to_boxes(&boxes)?, &spec).map_err(py_err)?;
    Ok((rows(&t.grid), t.sigma_map))
}

/// Distribution focal loss of a probability vector at continuous target `y`.
#[pyfunction]
fn dfl(probs: Vec<f64>, y: f64) -> PyResult<f64> {
    let d = BinDistribution::from_probs(probs).map_err(py_err)?;
    losses::dfl(&d, y).map_err(py_err)
}

fn noise_config(alpha: f64, mu: f64, sigma_n: f64, mode: &str) -> PyResult<NoiseConfig> {
    let cfg = NoiseConfig {
        alpha,
        mu,
        sigma_n,
        mode: mode.parse::<NoiseMode>().map_err(py_err)?,
        seed: 0,
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Target after noise calibration with an explicit standard-normal draw `xi`.
#[pyfunction]
#[pyo3(signature = (y, xi, alpha=1.0, mu=0.0, sigma_n=1.0, mode="inflate", max_target=15.0))]
fn noise_calibrate(y: f64, xi: f64, alpha: f64, mu: f64, sigma_n: f64, mode: &str, max_target: f64) -> PyResult<f64> {
    Ok(losses::noise_calibrate(y, &noise_config(alpha, mu, sigma_n, mode)?, xi, max_target))
}

/// DFL against the noise-calibrated target for draw `xi`.
#[pyfunction]
#[pyo3(signature = (probs, y, xi, alpha=1.0, mu=0.0, sigma_n=1.0, mode="inflate"))]
fn nc_dfl(probs: Vec<f64>, y: f64, xi: f64, alpha: f64, mu: f64, sigma_n: f64, mode: &str) -> PyResult<f64> {
    let d = BinDistribution::from_probs(probs).map_err(py_err)?;
    losses::nc_dfl_with_draw(&d, y, &noise_config(alpha, mu, sigma_n, mode)?, xi).map_err(py_err)
}

fn to_dets(raw: &[(f64, f64, f64, f64, f64)]) -> PyResult<Vec<Detection>> {
    raw.iter()
        .map(|&(a, b, c, d, score)| {
            Ok(Detection {
                bbox: geometry::BBox::new(a, b, c, d).map_err(py_err)?,
                score,
            })
        })
        .collect()
}

/// 101-point interpolated AP of `(x1, y1, x2, y2, score)` detections.
#[pyfunction]
fn average_precision(dets: Vec<(f64, f64, f64, f64, f64)>, gts: Vec<Corners>, iou_thr: f64) -> PyResult<f64> {
    Ok(evaluation::average_precision(&to_dets(&dets)?, &to_boxes(&gts)?, iou_thr))
}

/// `(AP50, AP75, AP50-95)`.
#[pyfunction]
fn ap_range(dets: Vec<(f64, f64, f64, f64, f64)>, gts: Vec<Corners>) -> PyResult<(f64, f64, f64)> {
    let s = evaluation::ap_range(&to_dets(&dets)?, &to_boxes(&gts)?);
    Ok((s.ap50, s.ap75, s.ap50_95))
}

#[pyfunction]
fn density_label(mean: f64) -> String {
    Density::classify(mean).to_string()
}

/// Writes a synthetic split; returns `(scene, mean heads, label)` per scene.
#[pyfunction]
fn make_split(profile: &str, n: usize, seed: u64, out_dir: &str) -> PyResult<Vec<(u32, f64, String)>> {
    let profile: Profile = profile.parse().map_err(py_err)?;
    let data = make_split_rs(profile, n, seed, Path::new(out_dir)).map_err(py_err)?;
    let stats = data.stats().map_err(py_err)?;
    Ok(stats
        .scenes
        .iter()
        .map(|s| (s.scene, s.mean, s.label.to_string()))
        .collect())
}

/// Runs every finite-difference unit; returns `(name, worst, tol, passed)`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> Vec<(String, f64, f64, bool)> {
    alff::gradcheck::run(seed, None)
        .units
        .iter()
        .map(|u| (u.name.to_string(), u.worst, u.tol, u.passed()))
        .collect()
}

/// Trains from `key = value` config text; returns `(epochs, steps, last total loss)`.
#[pyfunction]
fn train(config_text: &str) -> PyResult<(u64, u64, f64)> {
    let cfg = RunConfig::parse(config_text, Path::new("<python>")).map_err(py_err)?;
    let t = train_rs(cfg, None, |_| {}).map_err(py_err)?;
    Ok((t.epoch, t.step, t.log.last().map_or(f64::NAN, |r| r.total)))
}

/// `(AP50, AP75, AP50-95)` of a checkpoint on a dataset directory.
#[pyfunction]
fn evaluate_checkpoint(checkpoint: &str, dataset: &str) -> PyResult<(f64, f64, f64)> {
    let ckpt = Checkpoint::load(Path::new(checkpoint)).map_err(py_err)?;
    let data = Dataset::load(Path::new(dataset)).map_err(py_err)?;
    let (s, _) = evaluate(&ckpt.model, &data).map_err(py_err)?;
    Ok((s.ap50, s.ap75, s.ap50_95))
}

/// Detector with optional auxiliary heatmap branch.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Model,
}

fn gray_image(pixels: Vec<f64>, height: usize, width: usize) -> PyResult<Tensor3> {
    if pixels.len() != height * width {
        return Err(PyValueError::new_err(format!(
            "expected {} pixels for {height}x{width}, got {}",
            height * width,
            pixels.len()
        )));
    }
    let data = [pixels.clone(), pixels.clone(), pixels].concat();
    Tensor3::from_vec(3, height, width, data).map_err(py_err)
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset="compact", seed=0, alff=true))]
    fn new(preset: &str, seed: u64, alff: bool) -> PyResult<Self> {
        let preset: ModelPreset = preset.parse().map_err(py_err)?;
        Ok(Self {
            inner: Model::new(preset.config().with_alff(alff), seed),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(Path::new(path)).map_err(py_err)?.model,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let m = &self.inner;
        Checkpoint::new(0, 0, 0, m.clone(), m.zeros_like())
            .save(Path::new(path))
            .map_err(py_err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn has_alff(&self) -> bool {
        self.inner.alff.is_some()
    }

    /// Gray image in `[0, 1]`, row-major. Returns `(x1, y1, x2, y2, score)` tuples.
    #[pyo3(signature = (pixels, height, width, score_thr=0.25, iou_thr=0.65))]
    fn detect(&self, pixels: Vec<f64>, height: usize, width: usize, score_thr: f64, iou_thr: f64) -> PyResult<Vec<(f64, f64, f64, f64, f64)>> {
        let image = gray_image(pixels, height, width)?;
        let (head, _) = self.inner.without_alff().forward_full(&image).map_err(py_err)?;
        Ok(postprocess(&head, score_thr, iou_thr)
            .iter()
            .map(|d| {
                let [a, b, c, e] = d.bbox.corners();
                (a, b, c, e, d.score)
            })
            .collect())
    }

    /// Auxiliary heatmap prediction at image resolution, or `None` without the branch.
    fn heatmap(&self, pixels: Vec<f64>, height: usize, width: usize) -> PyResult<Option<Vec<Vec<f64>>>> {
        let image = gray_image(pixels, height, width)?;
        let (_, heat) = self.inner.forward_full(&image).map_err(py_err)?;
        Ok(heat.as_ref().map(rows))
    }
}

#[pymodule]
fn alff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(render_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(dfl, m)?)?;
    m.add_function(wrap_pyfunction!(noise_calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(nc_dfl, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(ap_range, m)?)?;
    m.add_function(wrap_pyfunction!(density_label, m)?)?;
    m.add_function(wrap_pyfunction!(make_split, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_checkpoint, m)?)?;
    Ok(())
}
