//! Sparse LIBSVM-format datasets: parsing, label binarization, train/held-out
//! splits and neighboring datasets that differ in a single example.
//!
//! ```text
//! +1 1:0.5 3:-2.0   # comment
//! -1
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format::GFormat;

/// Sparse feature vector with 1-based, strictly increasing indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
    dim: usize,
}

impl SparseVector {
    pub fn new(entries: Vec<(usize, f64)>, dim: usize) -> Result<Self> {
        let mut prev = 0;
        for &(idx, val) in &entries {
            if idx <= prev {
                return Err(Error::InvalidArgument(format!(
                    "indices must be 1-based and strictly increasing (saw {idx} after {prev})"
                )));
            }
            if !val.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite value at index {idx}")));
            }
            prev = idx;
        }
        if prev > dim {
            return Err(Error::DimensionMismatch {
                expected: prev,
                got: dim,
            });
        }
        Ok(Self { entries, dim })
    }

    /// Dense vector `values` as a sparse vector, dropping exact zeros.
    pub fn from_dense(values: &[f64]) -> Result<Self> {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i + 1, *v))
            .collect();
        Self::new(entries, values.len().max(1))
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Largest index present, 0 for an empty vector.
    pub fn max_index(&self) -> usize {
        self.entries.last().map_or(0, |e| e.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum()
    }

    /// `⟨dense, self⟩`; caller guarantees `dense.len() >= max_index()`.
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| dense[i - 1] * v).sum()
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for &(i, v) in &self.entries {
            out[i - 1] = v;
        }
        out
    }

    fn with_dim(mut self, dim: usize) -> Self {
        debug_assert!(self.max_index() <= dim);
        self.dim = dim;
        self
    }
}

/// One labeled example `z = (x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: SparseVector,
    pub label: f64,
}

impl Example {
    pub fn new(features: SparseVector, label: f64) -> Self {
        Self { features, label }
    }
}

/// Immutable, nonempty collection of examples sharing a feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, dim: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Degenerate("dataset has no examples".into()));
        }
        if dim == 0 {
            return Err(Error::Degenerate("feature dimension must be positive".into()));
        }
        let examples = examples
            .into_iter()
            .map(|ex| {
                let max = ex.features.max_index();
                if max > dim {
                    Err(Error::DimensionMismatch { expected: max, got: dim })
                } else {
                    Ok(Example {
                        features: ex.features.with_dim(dim),
                        label: ex.label,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { examples, dim })
    }

    pub fn n(&self) -> usize {
        self.examples.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    /// 1-based access, matching the indices drawn by the sampler.
    pub fn example(&self, index: usize) -> &Example {
        &self.examples[index - 1]
    }

    pub fn labels(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn is_binary(&self) -> bool {
        self.examples.iter().all(|e| e.label == 1.0 || e.label == -1.0)
    }

    /// Relabels with [`binarize_labels`].
    pub fn binarize(self) -> Result<Self> {
        let labels = binarize_labels(&self.labels())?;
        let examples = self
            .examples
            .into_iter()
            .zip(labels)
            .map(|(ex, y)| Example::new(ex.features, y))
            .collect();
        Ok(Self { examples, dim: self.dim })
    }

    /// Same examples with a larger feature dimension.
    pub fn with_dim(self, dim: usize) -> Result<Self> {
        Self::new(self.examples, dim.max(self.dim))
    }

    /// Keeps at most `max` examples chosen uniformly at random, in original order.
    pub fn subsample(&self, max: usize, seed: u64) -> Result<Self> {
        if max == 0 {
            return Err(Error::InvalidArgument("subsample size must be positive".into()));
        }
        if self.n() <= max {
            return Ok(self.clone());
        }
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut keep = order[..max].to_vec();
        keep.sort_unstable();
        Self::new(keep.iter().map(|&i| self.examples[i].clone()).collect(), self.dim)
    }
}

/// Which example of `S` to replace, and with what.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSpec {
    /// 1-based position in the dataset.
    pub index: usize,
    pub replacement: Example,
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

fn parse_line(text: &str, line: usize) -> Result<Option<Example>> {
    let content = text.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return Ok(None);
    }
    let mut tokens = content.split_whitespace();
    let label_tok = tokens.next().expect("nonempty line has a token");
    let label: f64 = label_tok
        .parse()
        .map_err(|_| parse_err(line, format!("malformed label `{label_tok}`")))?;
    if !label.is_finite() {
        return Err(parse_err(line, format!("non-finite label `{label_tok}`")));
    }

    let mut entries = Vec::new();
    let mut prev = 0usize;
    for tok in tokens {
        let (idx_s, val_s) = tok
            .split_once(':')
            .ok_or_else(|| parse_err(line, format!("malformed token `{tok}`")))?;
        let idx: usize = idx_s
            .parse()
            .map_err(|_| parse_err(line, format!("malformed index in `{tok}`")))?;
        if idx == 0 {
            return Err(parse_err(line, format!("index must be 1-based in `{tok}`")));
        }
        if idx <= prev {
            return Err(parse_err(
                line,
                format!("non-increasing index {idx} after {prev}"),
            ));
        }
        let val: f64 = val_s
            .parse()
            .map_err(|_| parse_err(line, format!("malformed value in `{tok}`")))?;
        if !val.is_finite() {
            return Err(parse_err(line, format!("non-finite value in `{tok}`")));
        }
        entries.push((idx, val));
        prev = idx;
    }
    let dim = prev.max(1);
    Ok(Some(Example::new(SparseVector { entries, dim }, label)))
}

/// Parses LIBSVM text. Labels are kept as raw reals; `dim` is the largest
/// index seen or `min_dim`, whichever is larger.
pub fn parse_libsvm<R: BufRead>(reader: R, min_dim: Option<usize>) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut dim = min_dim.unwrap_or(0);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(ex) = parse_line(&line, lineno + 1)? {
            dim = dim.max(ex.features.max_index());
            examples.push(ex);
        }
    }
    Dataset::new(examples, dim.max(1))
}

pub fn parse_libsvm_str(text: &str, min_dim: Option<usize>) -> Result<Dataset> {
    parse_libsvm(text.as_bytes(), min_dim)
}

pub fn read_libsvm_file(path: &Path, min_dim: Option<usize>) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(std::io::BufReader::new(file), min_dim).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

/// Serializes one example as a LIBSVM line (no trailing newline).
pub fn format_example(ex: &Example) -> String {
    let mut line = GFormat::g17(ex.label).to_string();
    for &(i, v) in ex.features.entries() {
        line.push(' ');
        line.push_str(&format!("{i}:{}", GFormat::g17(v)));
    }
    line
}

pub fn write_libsvm<W: Write>(d: &Dataset, mut out: W) -> Result<()> {
    for ex in d.examples() {
        writeln!(out, "{}", format_example(ex))?;
    }
    Ok(())
}

/// Maps raw class labels to ±1: distinct labels sorted ascending, the first
/// `⌈k/2⌉` classes become +1 and the rest −1. Labels already in {−1, +1}
/// pass through unchanged.
pub fn binarize_labels(raw: &[f64]) -> Result<Vec<f64>> {
    let mut classes: Vec<f64> = raw.to_vec();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least two distinct labels, found {}",
            classes.len()
        )));
    }
    if classes == [-1.0, 1.0] {
        return Ok(raw.to_vec());
    }
    let positive = classes.len().div_ceil(2);
    let threshold = classes[positive - 1];
    Ok(raw
        .iter()
        .map(|&y| if y <= threshold { 1.0 } else { -1.0 })
        .collect())
}

/// Uniformly random partition into `(train, held)` with `⌊fraction·n⌋`
/// training examples; both parts keep the original relative order.
pub fn split(d: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {fraction} not in (0, 1)"
        )));
    }
    let n = d.n();
    let n_train = (fraction * n as f64).floor() as usize;
    if n_train < 1 || n_train >= n {
        return Err(Error::Degenerate(format!(
            "split of {n} examples at fraction {fraction} leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, held_idx) = order.split_at_mut(n_train);
    train_idx.sort_unstable();
    held_idx.sort_unstable();
    let pick = |idx: &[usize]| -> Result<Dataset> {
        Dataset::new(idx.iter().map(|&i| d.examples[i].clone()).collect(), d.dim)
    };
    Ok((pick(train_idx)?, pick(held_idx)?))
}

/// `S^(i)`: a copy of `d` with position `spec.index` replaced.
pub fn make_neighbor(d: &Dataset, spec: &NeighborSpec) -> Result<Dataset> {
    if spec.index < 1 || spec.index > d.n() {
        return Err(Error::IndexOutOfRange {
            index: spec.index,
            n: d.n(),
        });
    }
    let max = spec.replacement.features.max_index();
    if max > d.dim {
        return Err(Error::DimensionMismatch {
            expected: max,
            got: d.dim,
        });
    }
    let mut examples = d.examples.clone();
    examples[spec.index - 1] = Example {
        features: spec.replacement.features.clone().with_dim(d.dim),
        label: spec.replacement.label,
    };
    Ok(Dataset {
        examples,
        dim: d.dim,
    })
}

/// `(name, n, d)` of the LIBSVM benchmark files used in the stability
/// experiments.
pub const REFERENCE_SHAPES: [(&str, usize, usize); 8] = [
    ("a9a", 32561, 123),
    ("connect-4", 67557, 126),
    ("dna", 2000, 180),
    ("gisette", 6000, 5000),
    ("mnist", 60000, 780),
    ("mushrooms", 8124, 112),
    ("phishing", 11055, 68),
    ("covtype", 581012, 54),
];

/// Looks for `name`, `name.txt` or `name.libsvm` in `dir`.
pub fn find_local_file(dir: &Path, name: &str) -> Option<std::path::PathBuf> {
    ["", ".txt", ".libsvm"]
        .iter()
        .map(|ext| dir.join(format!("{name}{ext}")))
        .find(|p| p.is_file())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_basic_line() {
        let d = parse_libsvm_str("+1 1:0.5 3:-2.0\n", None).unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.dim(), 3);
        let ex = d.example(1);
        assert_eq!(ex.label, 1.0);
        assert_eq!(ex.features.entries(), &[(1, 0.5), (3, -2.0)]);
    }

    #[test]
    fn featureless_line() {
        let d = parse_libsvm_str("-1\n", None).unwrap();
        assert_eq!(d.example(1).label, -1.0);
        assert_eq!(d.example(1).features.nnz(), 0);
        assert_eq!(d.dim(), 1);
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = "# header\n\n1 2:1 # trailing\n   \n-1 1:3\n";
        let d = parse_libsvm_str(text, None).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn dim_override_takes_max() {
        assert_eq!(parse_libsvm_str("1 2:1\n", Some(10)).unwrap().dim(), 10);
        assert_eq!(parse_libsvm_str("1 12:1\n", Some(10)).unwrap().dim(), 12);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("1 1:1\n1 3:1 2:1\n", 2),
            ("1 1:1\n\nfoo 1:1\n", 3),
            ("1 a:1\n", 1),
            ("1 1:x\n", 1),
            ("1 1:nan\n", 1),
            ("1 1:inf\n", 1),
            ("1 0:1\n", 1),
            ("1 1\n", 1),
            ("1 2:1 2:3\n", 1),
        ];
        for (text, want) in cases {
            match parse_libsvm_str(text, None) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn empty_input_is_degenerate() {
        assert!(matches!(
            parse_libsvm_str("# nothing\n", None),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn binarize_four_classes() {
        let out = binarize_labels(&[3.0, 0.0, 1.0, 2.0, 0.0]).unwrap();
        assert_eq!(out, vec![-1.0, 1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn binarize_three_classes() {
        let out = binarize_labels(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out, vec![1.0, 1.0, -1.0]);
    }

    #[test]
    fn binarize_passthrough_and_two_class() {
        assert_eq!(
            binarize_labels(&[-1.0, 1.0, 1.0]).unwrap(),
            vec![-1.0, 1.0, 1.0]
        );
        // {1, 2} as in mushrooms: 1 → +1, 2 → −1.
        assert_eq!(binarize_labels(&[2.0, 1.0]).unwrap(), vec![-1.0, 1.0]);
        // {0, 1}: not already ±1, so the sorted rule applies.
        assert_eq!(binarize_labels(&[0.0, 1.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn binarize_rejects_single_class() {
        assert!(matches!(
            binarize_labels(&[1.0, 1.0]),
            Err(Error::Degenerate(_))
        ));
    }

    fn toy(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| {
                Example::new(
                    SparseVector::new(vec![(1, i as f64), (2, 1.0)], 2).unwrap(),
                    if i % 2 == 0 { 1.0 } else { -1.0 },
                )
            })
            .collect();
        Dataset::new(examples, 2).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = toy(10);
        let (tr, he) = split(&d, 0.8, 7).unwrap();
        assert_eq!((tr.n(), he.n()), (8, 2));
        let (tr2, he2) = split(&d, 0.8, 7).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(he, he2);
        // floor(0.8 · 32561)
        assert_eq!((0.8 * 32561.0f64).floor() as usize, 26048);
    }

    #[test]
    fn split_rejects_degenerate() {
        let d = toy(2);
        assert!(split(&d, 0.4, 0).is_err());
        assert!(split(&d, 1.0, 0).is_err());
        assert!(split(&toy(1), 0.5, 0).is_err());
    }

    #[test]
    fn neighbor_replaces_one_position() {
        let d = toy(3);
        let repl = Example::new(SparseVector::new(vec![(2, 9.0)], 2).unwrap(), 1.0);
        let nb = make_neighbor(&d, &NeighborSpec { index: 2, replacement: repl.clone() }).unwrap();
        let diffs: Vec<usize> = (1..=3).filter(|&i| d.example(i) != nb.example(i)).collect();
        assert_eq!(diffs, vec![2]);
        assert_eq!(nb.example(2), &repl);
        // identity replacement
        let same = make_neighbor(
            &d,
            &NeighborSpec { index: 1, replacement: d.example(1).clone() },
        )
        .unwrap();
        assert_eq!(same, d);
    }

    #[test]
    fn neighbor_index_errors() {
        let d = toy(3);
        let repl = d.example(1).clone();
        for index in [0, 4] {
            assert!(matches!(
                make_neighbor(&d, &NeighborSpec { index, replacement: repl.clone() }),
                Err(Error::IndexOutOfRange { .. })
            ));
        }
        let wide = Example::new(SparseVector::new(vec![(5, 1.0)], 5).unwrap(), 1.0);
        assert!(matches!(
            make_neighbor(&d, &NeighborSpec { index: 1, replacement: wide }),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn subsample_keeps_order() {
        let d = toy(20);
        let s = d.subsample(5, 3).unwrap();
        assert_eq!(s.n(), 5);
        let firsts: Vec<f64> = s.examples().iter().map(|e| e.features.entries()[0].1).collect();
        assert!(firsts.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(d.subsample(30, 3).unwrap(), d);
    }

    fn arb_example() -> impl Strategy<Value = Example> {
        (
            prop::collection::btree_map(1usize..50, -1e6f64..1e6, 0..8),
            prop::sample::select(vec![-1.0, 1.0, 0.0, 2.5, 3.0]),
        )
            .prop_map(|(m, y)| {
                let entries: Vec<_> = m.into_iter().collect();
                Example::new(SparseVector::new(entries, 50).unwrap(), y)
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(examples in prop::collection::vec(arb_example(), 1..20)) {
            let d = Dataset::new(examples, 50).unwrap();
            let mut buf = Vec::new();
            write_libsvm(&d, &mut buf).unwrap();
            let back = parse_libsvm(buf.as_slice(), Some(50)).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn binarized_labels_are_pm1_and_class_constant(raw in prop::collection::vec(0u8..6, 2..40)) {
            let raw: Vec<f64> = raw.into_iter().map(f64::from).collect();
            prop_assume!(raw.iter().any(|&y| y != raw[0]));
            let out = binarize_labels(&raw).unwrap();
            for (i, &a) in raw.iter().enumerate() {
                prop_assert!(out[i] == 1.0 || out[i] == -1.0);
                for (j, &b) in raw.iter().enumerate() {
                    if a == b { prop_assert_eq!(out[i], out[j]); }
                }
            }
        }

        #[test]
        fn split_is_partition(n in 2usize..60, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let d = toy(n);
            let n_train = (frac * n as f64).floor() as usize;
            prop_assume!(n_train >= 1 && n_train < n);
            let (tr, he) = split(&d, frac, seed).unwrap();
            prop_assert_eq!(tr.n() + he.n(), n);
            // feature 1 holds the original position, so positions are recoverable
            let mut seen: Vec<usize> = tr.examples().iter().chain(he.examples())
                .map(|e| e.features.entries()[0].1 as usize).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn neighbor_differs_in_at_most_one(n in 1usize..20, idx in 1usize..20, ex in arb_example()) {
            prop_assume!(idx <= n);
            let d = Dataset::new(toy(n).examples().to_vec(), 50).unwrap();
            let nb = make_neighbor(&d, &NeighborSpec { index: idx, replacement: ex }).unwrap();
            let diff = (1..=n).filter(|&i| d.example(i) != nb.example(i)).count();
            prop_assert!(diff <= 1);
            prop_assert_eq!(nb.n(), d.n());
        }
    }
}
