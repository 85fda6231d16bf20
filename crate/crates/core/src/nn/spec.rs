use std::fmt;

use crate::error::{Error, Result};

/// Activation shape `channels x height x width`; fully connected outputs are `units x 1 x 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Input { h: usize, w: usize, c: usize },
    Conv2D { kh: usize, kw: usize, filters: usize, sh: usize, sw: usize },
    BatchNorm,
    ReLU,
    Sigmoid,
    MaxPool { ph: usize, pw: usize, sh: usize, sw: usize },
    Dropout { rate: f64 },
    FullyConnected { units: usize },
    RegressionOutput,
}

impl LayerSpec {
    pub fn conv(kh: usize, kw: usize, filters: usize, sh: usize, sw: usize) -> Self {
        LayerSpec::Conv2D { kh, kw, filters, sh, sw }
    }

    pub fn pool(ph: usize, pw: usize, sh: usize, sw: usize) -> Self {
        LayerSpec::MaxPool { ph, pw, sh, sw }
    }

    pub fn fc(units: usize) -> Self {
        LayerSpec::FullyConnected { units }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2D { .. } | LayerSpec::BatchNorm | LayerSpec::FullyConnected { .. })
    }

    /// Stable text form, used in checkpoint manifests.
    pub fn encode(&self) -> String {
        match *self {
            LayerSpec::Input { h, w, c } => format!("input {h} {w} {c}"),
            LayerSpec::Conv2D { kh, kw, filters, sh, sw } => format!("conv {kh} {kw} {filters} {sh} {sw}"),
            LayerSpec::BatchNorm => "batchnorm".into(),
            LayerSpec::ReLU => "relu".into(),
            LayerSpec::Sigmoid => "sigmoid".into(),
            LayerSpec::MaxPool { ph, pw, sh, sw } => format!("maxpool {ph} {pw} {sh} {sw}"),
            LayerSpec::Dropout { rate } => format!("dropout {rate:e}"),
            LayerSpec::FullyConnected { units } => format!("fc {units}"),
            LayerSpec::RegressionOutput => "regression".into(),
        }
    }

    pub fn decode(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad layer record `{s}`"));
        let mut it = s.split_whitespace();
        let kind = it.next().ok_or_else(bad)?;
        let rest: Vec<&str> = it.collect();
        let ints = |n: usize| -> Result<Vec<usize>> {
            if rest.len() != n {
                return Err(bad());
            }
            rest.iter().map(|t| t.parse::<usize>().map_err(|_| bad())).collect()
        };
        Ok(match kind {
            "input" => {
                let v = ints(3)?;
                LayerSpec::Input { h: v[0], w: v[1], c: v[2] }
            }
            "conv" => {
                let v = ints(5)?;
                LayerSpec::conv(v[0], v[1], v[2], v[3], v[4])
            }
            "batchnorm" if rest.is_empty() => LayerSpec::BatchNorm,
            "relu" if rest.is_empty() => LayerSpec::ReLU,
            "sigmoid" if rest.is_empty() => LayerSpec::Sigmoid,
            "maxpool" => {
                let v = ints(4)?;
                LayerSpec::pool(v[0], v[1], v[2], v[3])
            }
            "dropout" if rest.len() == 1 => LayerSpec::Dropout {
                rate: rest[0].parse().map_err(|_| bad())?,
            },
            "fc" => LayerSpec::fc(ints(1)?[0]),
            "regression" if rest.is_empty() => LayerSpec::RegressionOutput,
            _ => return Err(bad()),
        })
    }

    fn name(&self) -> String {
        match *self {
            LayerSpec::Input { .. } => "Input".into(),
            LayerSpec::Conv2D { kh, kw, filters, sh, sw } => {
                format!("Convolutional 2D [{kh}, {kw}] x{filters} stride [{sh}, {sw}]")
            }
            LayerSpec::BatchNorm => "Batch Normalisation".into(),
            LayerSpec::ReLU => "ReLU".into(),
            LayerSpec::Sigmoid => "Sigmoid".into(),
            LayerSpec::MaxPool { ph, pw, sh, sw } => format!("MaxPooling2D [{ph}, {pw}] stride [{sh}, {sw}]"),
            LayerSpec::Dropout { rate } => format!("Dropout {rate}"),
            LayerSpec::FullyConnected { units } => format!("Fully Connected {units}"),
            LayerSpec::RegressionOutput => "Regression".into(),
        }
    }
}

fn window_out(input: usize, k: usize, stride: usize) -> Option<usize> {
    (k <= input).then(|| (input - k) / stride + 1)
}

/// Layer list plus the propagated output shape of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub shapes: Vec<Shape>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let err = |i: usize, l: &LayerSpec, msg: String| Error::shape(format!("layer {} ({}): {msg}", i + 1, l.name()));
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = match layers.first() {
            Some(&LayerSpec::Input { h, w, c }) if h >= 1 && w >= 1 && c >= 1 => Shape::new(c, h, w),
            Some(l) => return Err(err(0, l, "model must start with a non-empty Input".into())),
            None => return Err(Error::shape("empty layer list")),
        };
        shapes.push(cur);
        for (i, l) in layers.iter().enumerate().skip(1) {
            cur = match *l {
                LayerSpec::Input { .. } => return Err(err(i, l, "Input only allowed first".into())),
                LayerSpec::Conv2D { kh, kw, sh, sw, .. } | LayerSpec::MaxPool { ph: kh, pw: kw, sh, sw } => {
                    let c = match *l {
                        LayerSpec::Conv2D { filters, .. } => filters,
                        _ => cur.c,
                    };
                    if kh == 0 || kw == 0 || sh == 0 || sw == 0 || c == 0 {
                        return Err(err(i, l, "kernel sizes, strides and filter counts must be >= 1".into()));
                    }
                    match (window_out(cur.h, kh, sh), window_out(cur.w, kw, sw)) {
                        (Some(h), Some(w)) => Shape::new(c, h, w),
                        _ => return Err(err(i, l, format!("window [{kh}, {kw}] underflows input {cur}"))),
                    }
                }
                LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                    return Err(err(i, l, "dropout rate must lie in [0, 1)".into()));
                }
                LayerSpec::FullyConnected { units: 0 } => return Err(err(i, l, "units must be >= 1".into())),
                LayerSpec::FullyConnected { units } => Shape::new(units, 1, 1),
                LayerSpec::RegressionOutput if i + 1 != layers.len() => {
                    return Err(err(i, l, "Regression must be the last layer".into()));
                }
                _ => cur,
            };
            shapes.push(cur);
        }
        let n = layers.len();
        if n < 3
            || layers[n - 1] != LayerSpec::RegressionOutput
            || layers[n - 2] != LayerSpec::fc(1)
        {
            return Err(Error::shape("model must end with Fully Connected 1 + Regression"));
        }
        Ok(Self { layers, shapes })
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    /// Output shape of the layer before `i` (the input of layer `i`).
    pub fn in_shape(&self, i: usize) -> Shape {
        self.shapes[i - 1]
    }

    /// Index of the last Dropout layer; everything up to it is the feature extractor.
    pub fn last_dropout(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, LayerSpec::Dropout { .. }))
    }

    pub fn with_dropout_rate(&self, rate: f64) -> Result<Self> {
        ModelSpec::new(
            self.layers
                .iter()
                .map(|l| match l {
                    LayerSpec::Dropout { .. } => LayerSpec::Dropout { rate },
                    other => *other,
                })
                .collect(),
        )
    }
}

pub const DROPOUT_RATE: f64 = 0.2;

/// Feed-forward head shared by all types; Type-1 has an extra 30-unit layer.
fn head(type1: bool) -> Vec<LayerSpec> {
    let mut out = Vec::new();
    let units: &[usize] = if type1 { &[30, 20, 10, 5] } else { &[20, 10, 5] };
    for &u in units {
        out.push(LayerSpec::fc(u));
        out.push(LayerSpec::Sigmoid);
    }
    out.push(LayerSpec::fc(1));
    out.push(LayerSpec::RegressionOutput);
    out
}

/// The Type-1, Type-2 or Type-3 architecture for single-channel `h x w` images.
pub fn build_type(kind: u8, input_dims: (usize, usize)) -> Result<ModelSpec> {
    use LayerSpec::*;
    let input = Input { h: input_dims.0, w: input_dims.1, c: 1 };
    let dropout = Dropout { rate: DROPOUT_RATE };
    let mut layers = match kind {
        1 => vec![
            input,
            LayerSpec::conv(1, 6, 4, 1, 3),
            BatchNorm,
            ReLU,
            LayerSpec::conv(1, 4, 4, 1, 2),
            BatchNorm,
            ReLU,
            LayerSpec::pool(1, 6, 1, 2),
            LayerSpec::conv(1, 2, 32, 1, 1),
            BatchNorm,
            ReLU,
            LayerSpec::conv(1, 4, 4, 1, 2),
            BatchNorm,
            LayerSpec::pool(1, 6, 1, 2),
            LayerSpec::conv(1, 2, 32, 1, 1),
            BatchNorm,
            ReLU,
            dropout,
        ],
        2 => vec![
            input,
            LayerSpec::conv(1, 6, 4, 1, 3),
            BatchNorm,
            ReLU,
            LayerSpec::conv(2, 4, 4, 1, 2),
            BatchNorm,
            ReLU,
            LayerSpec::pool(2, 6, 1, 2),
            LayerSpec::conv(2, 2, 32, 1, 1),
            BatchNorm,
            ReLU,
            dropout,
        ],
        3 => vec![input, LayerSpec::conv(1, 6, 4, 1, 3), BatchNorm, ReLU, dropout],
        other => return Err(Error::config("model_type", format!("unknown CNN type {other} (expected 1, 2 or 3)"))),
    };
    layers.extend(head(kind == 1));
    ModelSpec::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type1_full_scale_chain() {
        let s = build_type(1, (7, 10_568)).unwrap();
        assert_eq!(s.layers.len(), 28);
        assert_eq!(s.shapes[1], Shape::new(4, 7, 3521));
        assert_eq!(s.shapes[4], Shape::new(4, 7, 1759));
        assert_eq!(s.shapes[7], Shape::new(4, 7, 877));
        assert_eq!(s.shapes[17], Shape::new(32, 7, 215));
        assert_eq!(s.shapes[18], Shape::new(30, 1, 1));
        assert_eq!(s.last_dropout(), Some(17));
    }

    #[test]
    fn type3_chain() {
        let s = build_type(3, (7, 119)).unwrap();
        assert_eq!(s.shapes[1], Shape::new(4, 7, 38));
        assert!(matches!(s.layers[4], LayerSpec::Dropout { .. }));
        let units: Vec<usize> = s
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::FullyConnected { units } => Some(*units),
                _ => None,
            })
            .collect();
        assert_eq!(units, vec![20, 10, 5, 1]);
        assert_eq!(s.layers.len(), 13);
    }

    #[test]
    fn type2_underflow_names_layer() {
        // width 8: the second convolution already has no room
        let e = build_type(2, (7, 8)).unwrap_err().to_string();
        assert!(e.contains("layer 5"), "{e}");
        // widths 15..=44 reach the pooling layer before running out
        let e = build_type(2, (7, 30)).unwrap_err().to_string();
        assert!(e.contains("layer 8") && e.contains("MaxPooling2D"), "{e}");
        assert!(build_type(2, (7, 57)).is_ok());
        assert!(build_type(2, (7, 56)).is_err());
        assert!(build_type(2, (1, 200)).is_err());
        assert!(build_type(1, (7, 100)).is_err());
        assert!(build_type(4, (7, 100)).is_err());
    }

    #[test]
    fn chain_rule_holds_everywhere() {
        for (kind, w) in [(1, 10_568), (2, 3283), (3, 500)] {
            let s = build_type(kind, (7, w)).unwrap();
            for (i, l) in s.layers.iter().enumerate().skip(1) {
                let (inp, out) = (s.shapes[i - 1], s.shapes[i]);
                if let LayerSpec::Conv2D { kh, kw, sh, sw, .. } | LayerSpec::MaxPool { ph: kh, pw: kw, sh, sw } = *l {
                    assert_eq!(out.h, (inp.h - kh) / sh + 1);
                    assert_eq!(out.w, (inp.w - kw) / sw + 1);
                }
            }
        }
    }

    #[test]
    fn layer_text_round_trip() {
        let s = build_type(1, (7, 10_568)).unwrap();
        for l in &s.layers {
            assert_eq!(LayerSpec::decode(&l.encode()).unwrap(), *l);
        }
        assert!(LayerSpec::decode("conv 1 2").is_err());
        assert!(LayerSpec::decode("softmax").is_err());
    }

    #[test]
    fn bad_specs() {
        assert!(ModelSpec::new(vec![LayerSpec::fc(1), LayerSpec::RegressionOutput]).is_err());
        let input = LayerSpec::Input { h: 1, w: 4, c: 1 };
        assert!(ModelSpec::new(vec![input, LayerSpec::fc(2), LayerSpec::RegressionOutput]).is_err());
        assert!(ModelSpec::new(vec![input, LayerSpec::Dropout { rate: 1.0 }, LayerSpec::fc(1), LayerSpec::RegressionOutput]).is_err());
        assert!(ModelSpec::new(vec![input, LayerSpec::fc(1), LayerSpec::RegressionOutput]).is_ok());
    }
}
