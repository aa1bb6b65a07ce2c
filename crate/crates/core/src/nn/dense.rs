use ndarray::{Array2, ArrayD, ArrayView2, Axis, Ix2};
use rand::Rng;

use super::{glorot_uniform, Param};

/// Fully connected layer `y = x W + b`, `W` laid out `[in, out]`.
///
/// With a mask the effective weight is `W ∘ mask`; gradients are masked the
/// same way and [`Dense::apply_mask`] re-zeroes masked entries after updates.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub mask: Option<Array2<f64>>,
}

fn view2(x: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    x.view().into_dimensionality::<Ix2>().expect("dense layers take (n, features)")
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            weight: Param::new(glorot_uniform(rng, &[input, output], input, output)),
            bias: Param::zeros(&[output]),
            mask: None,
        }
    }

    pub fn masked<R: Rng>(rng: &mut R, mask: Array2<f64>) -> Self {
        let (input, output) = mask.dim();
        let mut layer = Self::new(rng, input, output);
        layer.mask = Some(mask);
        layer.apply_mask();
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn apply_mask(&mut self) {
        if let Some(mask) = &self.mask {
            let mut w = self.weight.value.view_mut().into_dimensionality::<Ix2>().expect("2-D weight");
            w *= mask;
        }
    }

    pub fn effective_weight(&self) -> Array2<f64> {
        let w = view2(&self.weight.value).to_owned();
        match &self.mask {
            Some(m) => w * m,
            None => w,
        }
    }

    pub fn forward(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let x = view2(x);
        assert_eq!(x.ncols(), self.in_dim(), "dense input width");
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        let y = x.dot(&self.effective_weight()) + b;
        y.into_dyn()
    }

    pub fn backward(&mut self, x: &ArrayD<f64>, dy: &ArrayD<f64>, need_input_grad: bool) -> Option<ArrayD<f64>> {
        let x = view2(x);
        let dy = view2(dy);
        let mut dw = x.t().dot(&dy);
        if let Some(m) = &self.mask {
            dw *= m;
        }
        let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-D weight");
        gw += &dw;
        let mut gb = self.bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        gb += &dy.sum_axis(Axis(0));
        need_input_grad.then(|| dy.dot(&self.effective_weight().t()).into_dyn())
    }
}
