//! 3D Grad-CAM.
//!
//! For class `C` and a conv block with activations `A_u` (channel `u`), the
//! channel weights are the spatial means of `∂y^C/∂A_u`, where `y^C` is the
//! pre-softmax logit. The map is `ReLU(Σ_u λ_u A_u)`, upsampled trilinearly
//! to the input grid and min-max normalized.

use jmap_core::{Geometry, Volume};
use jmap_net::{Mode, Model, Tensor};

use crate::ExplainError;

/// Third conv block.
pub const DEFAULT_LAYER: usize = 2;

/// Class activation map at block resolution, before upsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    /// Row-major `(D, H, W)` values, `x` fastest.
    pub values: Vec<f64>,
    pub dims: [usize; 3],
    /// Per-channel weights `λ_u`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Values in `[0, 1]` on the input grid.
    pub volume: Volume,
    pub class_index: usize,
    /// Conv block the activations came from (0-based).
    pub layer: usize,
}

/// Steps 1 to 3: gradients, channel weights and the rectified weighted sum
/// for a single-sample `(1, C, D, H, W)` input, in eval mode.
pub fn class_activation(model: &mut Model, input: &Tensor, class: usize, layer: usize) -> Result<Cam, ExplainError> {
    let classes = model.config().num_classes;
    if class >= classes {
        return Err(ExplainError::ClassOutOfRange { class, classes });
    }
    if layer >= model.num_blocks() {
        return Err(ExplainError::LayerNotCached {
            layer,
            blocks: model.num_blocks(),
        });
    }
    if input.shape().first() != Some(&1) {
        return Err(ExplainError::Shape(format!(
            "Grad-CAM takes one sample at a time, got {:?}",
            input.shape()
        )));
    }
    model.set_recording(true);
    let result = (|| {
        let logits = model.forward(input, Mode::Eval)?;
        let mut seed = Tensor::zeros(logits.shape());
        seed.data_mut()[class] = 1.0;
        model.backward(&seed)?;
        Ok::<_, ExplainError>(())
    })();
    let cam = result.map(|()| {
        let a = model.block_activation(layer).expect("recorded");
        let g = model.block_gradient(layer).expect("recorded");
        let [_, u, d, h, w] = a.dims5().expect("conv activations are 5-D");
        let z = d * h * w;
        let weights: Vec<f64> = g.data().chunks(z).map(|c| c.iter().sum::<f64>() / z as f64).collect();
        let mut values = vec![0.0; z];
        for (ch, lambda) in a.data().chunks(z).zip(&weights).take(u) {
            for (v, &x) in values.iter_mut().zip(ch) {
                *v += lambda * x;
            }
        }
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        Cam {
            values,
            dims: [d, h, w],
            weights,
        }
    });
    model.set_recording(false);
    cam
}

/// Trilinear upsampling with voxel-centre alignment: output voxel `i` of `n`
/// samples the source at `(i + ½)·m/n − ½`, clamped to the source grid.
pub fn upsample_trilinear(values: &[f64], dims: [usize; 3], target: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let src = Volume::new(Geometry::unit([w, h, d]), values.to_vec()).expect("length matches dims");
    let pos = |i: usize, n: usize, m: usize| (i as f64 + 0.5) * m as f64 / n as f64 - 0.5;
    let [td, th, tw] = target;
    let mut out = Vec::with_capacity(td * th * tw);
    for z in 0..td {
        for y in 0..th {
            for x in 0..tw {
                out.push(src.sample_clamped([pos(x, tw, w), pos(y, th, h), pos(z, td, d)]));
            }
        }
    }
    out
}

/// Rescale to `[0, 1]`. An all-zero map stays zero; any other constant map
/// becomes all ones.
pub fn normalize_min_max(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if values.is_empty() {
        return;
    }
    if hi > lo {
        values
            .iter_mut()
            .for_each(|v| *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0));
    } else {
        let c = if hi > 0.0 { 1.0 } else { 0.0 };
        values.iter_mut().for_each(|v| *v = c);
    }
}

/// Full Grad-CAM for one sample; `geometry` is the input grid (`[W, H, D]`
/// dims matching the tensor's spatial extent).
pub fn grad_cam_3d(
    model: &mut Model,
    input: &Tensor,
    class: usize,
    layer: usize,
    geometry: &Geometry,
) -> Result<Heatmap, ExplainError> {
    let [w, h, d] = geometry.dims();
    match input.dims5() {
        Some([_, _, id, ih, iw]) if [id, ih, iw] == [d, h, w] => {}
        _ => {
            return Err(ExplainError::Shape(format!(
                "input {:?} does not match the grid {:?}",
                input.shape(),
                geometry.dims()
            )))
        }
    }
    let cam = class_activation(model, input, class, layer)?;
    let mut values = upsample_trilinear(&cam.values, cam.dims, [d, h, w]);
    normalize_min_max(&mut values);
    let volume = Volume::new(geometry.clone(), values).map_err(|e| ExplainError::Shape(e.to_string()))?;
    Ok(Heatmap {
        volume,
        class_index: class,
        layer,
    })
}
