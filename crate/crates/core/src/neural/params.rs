use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ClassifierConfig;

/// All learnable tensors of the encoder classifier.
///
/// The per-head query/key/value projections are stored side by side: head
/// `h` owns columns `h * D/H .. (h + 1) * D/H` of `query`, `key` and `value`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub heads: usize,
    /// V × D
    pub embedding: Array2<f64>,
    /// W × D, learned
    pub position: Array2<f64>,
    /// D × D
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub output: Array2<f64>,
    pub norm1_scale: Array1<f64>,
    pub norm1_shift: Array1<f64>,
    /// D × F
    pub ff_in: Array2<f64>,
    pub ff_in_bias: Array1<f64>,
    /// F × D
    pub ff_out: Array2<f64>,
    pub ff_out_bias: Array1<f64>,
    pub norm2_scale: Array1<f64>,
    pub norm2_shift: Array1<f64>,
    /// D × L
    pub classifier: Array2<f64>,
    pub classifier_bias: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 16] = [
    "embedding",
    "position",
    "query",
    "key",
    "value",
    "output",
    "norm1_scale",
    "norm1_shift",
    "ff_in",
    "ff_in_bias",
    "ff_out",
    "ff_out_bias",
    "norm2_scale",
    "norm2_shift",
    "classifier",
    "classifier_bias",
];

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..limit))
}

impl EncoderParams {
    /// Scaled-uniform initialization: Glorot-uniform for projections,
    /// `U(-sqrt(3/D), sqrt(3/D))` for embedding and position rows, unit
    /// norm scales and zero biases.
    pub fn init(config: &ClassifierConfig, vocab_size: usize, seed: u64) -> Self {
        let d = config.model_dim;
        let f = config.ff_dim;
        let l = config.labels;
        let w = config.window;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb_limit = (3.0 / d as f64).sqrt();
        let mut table = |rows: usize| {
            Array2::from_shape_simple_fn((rows, d), || rng.gen_range(-emb_limit..emb_limit))
        };
        let embedding = table(vocab_size);
        let position = table(w);
        Self {
            heads: config.heads,
            embedding,
            position,
            query: glorot(&mut rng, d, d),
            key: glorot(&mut rng, d, d),
            value: glorot(&mut rng, d, d),
            output: glorot(&mut rng, d, d),
            norm1_scale: Array1::ones(d),
            norm1_shift: Array1::zeros(d),
            ff_in: glorot(&mut rng, d, f),
            ff_in_bias: Array1::zeros(f),
            ff_out: glorot(&mut rng, f, d),
            ff_out_bias: Array1::zeros(d),
            norm2_scale: Array1::ones(d),
            norm2_shift: Array1::zeros(d),
            classifier: glorot(&mut rng, d, l),
            classifier_bias: Array1::zeros(l),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        Self {
            heads: self.heads,
            embedding: z2(&self.embedding),
            position: z2(&self.position),
            query: z2(&self.query),
            key: z2(&self.key),
            value: z2(&self.value),
            output: z2(&self.output),
            norm1_scale: z1(&self.norm1_scale),
            norm1_shift: z1(&self.norm1_shift),
            ff_in: z2(&self.ff_in),
            ff_in_bias: z1(&self.ff_in_bias),
            ff_out: z2(&self.ff_out),
            ff_out_bias: z1(&self.ff_out_bias),
            norm2_scale: z1(&self.norm2_scale),
            norm2_shift: z1(&self.norm2_shift),
            classifier: z2(&self.classifier),
            classifier_bias: z1(&self.classifier_bias),
        }
    }

    pub fn model_dim(&self) -> usize {
        self.query.nrows()
    }

    pub fn ff_dim(&self) -> usize {
        self.ff_in.ncols()
    }

    pub fn window(&self) -> usize {
        self.position.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn labels(&self) -> usize {
        self.classifier.ncols()
    }

    /// Tensors in [`TENSOR_NAMES`] order with their shapes.
    pub fn tensors(&self) -> [(&'static str, Vec<usize>, &[f64]); 16] {
        macro_rules! t {
            ($i:expr, $a:expr) => {
                (
                    TENSOR_NAMES[$i],
                    $a.shape().to_vec(),
                    $a.as_slice().expect("standard layout"),
                )
            };
        }
        [
            t!(0, self.embedding),
            t!(1, self.position),
            t!(2, self.query),
            t!(3, self.key),
            t!(4, self.value),
            t!(5, self.output),
            t!(6, self.norm1_scale),
            t!(7, self.norm1_shift),
            t!(8, self.ff_in),
            t!(9, self.ff_in_bias),
            t!(10, self.ff_out),
            t!(11, self.ff_out_bias),
            t!(12, self.norm2_scale),
            t!(13, self.norm2_shift),
            t!(14, self.classifier),
            t!(15, self.classifier_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 16] {
        macro_rules! t {
            ($a:expr) => {
                $a.as_slice_mut().expect("standard layout")
            };
        }
        [
            t!(self.embedding),
            t!(self.position),
            t!(self.query),
            t!(self.key),
            t!(self.value),
            t!(self.output),
            t!(self.norm1_scale),
            t!(self.norm1_shift),
            t!(self.ff_in),
            t!(self.ff_in_bias),
            t!(self.ff_out),
            t!(self.ff_out_bias),
            t!(self.norm2_scale),
            t!(self.norm2_shift),
            t!(self.classifier),
            t!(self.classifier_bias),
        ]
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        let theirs = other.tensors();
        for (mine, (_, _, src)) in self.tensors_mut().into_iter().zip(theirs.iter()) {
            for (a, b) in mine.iter_mut().zip(src.iter()) {
                *a += scale * b;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }
}
