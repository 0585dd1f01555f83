//! Datasets: modular-arithmetic Cayley tables and MNIST in IDX format.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported binary operations on residues.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModOp {
    /// `a · b⁻¹ mod p`, `b ≠ 0`.
    Division,
    /// `(a + b) mod p`.
    Addition,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModArithSpec {
    pub p: u64,
    pub op: ModOp,
    /// Share of the shuffled table eligible for training; the rest is test.
    pub train_fraction: f64,
    /// Fraction of the eligible share actually used for training.
    pub beta: f64,
    pub seed: u64,
}

impl Default for ModArithSpec {
    fn default() -> Self {
        ModArithSpec {
            p: 97,
            op: ModOp::Division,
            train_fraction: 0.5,
            beta: 1.0,
            seed: 0,
        }
    }
}

impl ModArithSpec {
    pub fn validate(&self) -> Result<()> {
        if !is_prime(self.p) {
            return Err(Error::invalid(format!("modulus {} is not prime", self.p)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("beta {} outside (0, 1]", self.beta)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Token id of the operator symbol.
    pub fn op_token(&self) -> usize {
        self.p as usize
    }

    /// Token id of `=`.
    pub fn eq_token(&self) -> usize {
        self.p as usize + 1
    }

    pub fn vocab_size(&self) -> usize {
        self.p as usize + 2
    }

    /// Maximal training-set size `S`.
    pub fn max_train_size(&self) -> Result<usize> {
        let n = table_size(self.p, self.op);
        Ok((self.train_fraction * n as f64 + 1e-9).floor() as usize)
    }

    /// Training-set size `βS`.
    pub fn train_size(&self) -> Result<usize> {
        let s = self.max_train_size()?;
        Ok((self.beta * s as f64 + 1e-9).floor() as usize)
    }
}

fn table_size(p: u64, op: ModOp) -> usize {
    let p = p as usize;
    match op {
        ModOp::Division => p * (p - 1),
        ModOp::Addition => p * p,
    }
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Inverse of `b` modulo `p` by the extended Euclidean algorithm.
pub fn mod_inverse(b: u64, p: u64) -> Option<u64> {
    let (mut r0, mut r1) = (p as i128, (b % p) as i128);
    let (mut s0, mut s1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
    }
    if r0 != 1 {
        return None;
    }
    Some(s0.rem_euclid(p as i128) as u64)
}

/// Every `(a, b, a ∘ b)` for the operation, in lexicographic `(a, b)` order.
pub fn cayley_table(p: u64, op: ModOp) -> Result<Vec<(u64, u64, u64)>> {
    if !is_prime(p) {
        return Err(Error::invalid(format!("modulus {p} is not prime")));
    }
    let mut out = Vec::with_capacity(table_size(p, op));
    match op {
        ModOp::Division => {
            let inv: Vec<u64> = (1..p).map(|b| mod_inverse(b, p).expect("p is prime")).collect();
            for a in 0..p {
                for b in 1..p {
                    out.push((a, b, a * inv[(b - 1) as usize] % p));
                }
            }
        }
        ModOp::Addition => {
            for a in 0..p {
                for b in 0..p {
                    out.push((a, b, (a + b) % p));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ModArith(ModArithSpec),
    Mnist { images: String, labels: String, n: usize, seed: u64 },
    Synthetic(String),
}

/// Model inputs, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    /// `ids.len() == n * seq_len`.
    Tokens { seq_len: usize, ids: Vec<usize> },
    /// `values.len() == n * dim`, pixels scaled into [0, 1].
    Pixels { dim: usize, values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Features,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub split: Split,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn tokens(&self, i: usize) -> Option<&[usize]> {
        match &self.features {
            Features::Tokens { seq_len, ids } => Some(&ids[i * seq_len..(i + 1) * seq_len]),
            Features::Pixels { .. } => None,
        }
    }

    pub fn pixels(&self, i: usize) -> Option<&[f64]> {
        match &self.features {
            Features::Pixels { dim, values } => Some(&values[i * dim..(i + 1) * dim]),
            Features::Tokens { .. } => None,
        }
    }

    /// One-hot target row for example `i`.
    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_classes];
        v[self.labels[i]] = 1.0;
        v
    }

    /// Write `a<TAB>b<TAB>c` lines for a modular-arithmetic dataset.
    pub fn write_tsv(&self, out: &mut impl Write) -> std::io::Result<()> {
        for i in 0..self.len() {
            if let Some(t) = self.tokens(i) {
                writeln!(out, "{}\t{}\t{}", t[0], t[2], self.labels[i])?;
            }
        }
        Ok(())
    }
}

fn mod_arith_dataset(spec: &ModArithSpec, rows: &[(u64, u64, u64)], split: Split) -> Dataset {
    let mut ids = Vec::with_capacity(rows.len() * 4);
    let mut labels = Vec::with_capacity(rows.len());
    for &(a, b, c) in rows {
        ids.extend_from_slice(&[a as usize, spec.op_token(), b as usize, spec.eq_token()]);
        labels.push(c as usize);
    }
    Dataset {
        features: Features::Tokens { seq_len: 4, ids },
        labels,
        n_classes: spec.p as usize,
        split,
        provenance: Provenance::ModArith(*spec),
    }
}

/// Shuffle the full table with the spec seed; the tail is the test set and
/// the training set is the first `βS` rows of the head.
///
/// The test set does not depend on `β`, and training sets for smaller `β`
/// are prefixes of those for larger `β`.
pub fn split_dataset(spec: &ModArithSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut table = cayley_table(spec.p, spec.op)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    table.shuffle(&mut rng);
    let s = spec.max_train_size()?;
    let n_train = spec.train_size()?;
    if n_train < 1 {
        return Err(Error::invalid(format!(
            "beta * S = {} * {s} leaves no training examples",
            spec.beta
        )));
    }
    let train = mod_arith_dataset(spec, &table[..n_train], Split::Train);
    let test = mod_arith_dataset(spec, &table[s..], Split::Test);
    Ok((train, test))
}

/// Shuffled index batches for one epoch. The final partial batch is dropped.
pub fn batches(len: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    if len < batch_size {
        return Err(Error::invalid(format!(
            "dataset of {len} examples is smaller than batch size {batch_size}"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(idx
        .chunks_exact(batch_size)
        .map(|c| c.to_vec())
        .collect())
}

/// Derive an independent stream seed from a base seed and an index.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file.
#[derive(Clone, Debug)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: "file truncated inside header".into(),
        })
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated image data: {need} bytes expected"),
        });
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: bytes[16..need].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + n {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated label data: {} bytes expected", 8 + n),
        });
    }
    let labels = bytes[8..8 + n].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Format {
            offset: (8 + pos) as u64,
            message: format!("label {} out of range", labels[pos]),
        });
    }
    Ok(labels)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Encode images and labels as IDX byte streams.
pub fn encode_idx(images: &IdxImages, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len();
    let mut img = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, images.rows as u32, images.cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(&images.pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}

fn pixel_dataset(images: &IdxImages, labels: &[u8], pick: &[usize], split: Split, provenance: Provenance) -> Dataset {
    let dim = images.rows * images.cols;
    let mut values = Vec::with_capacity(pick.len() * dim);
    for &i in pick {
        values.extend(images.pixels[i * dim..(i + 1) * dim].iter().map(|&b| b as f64 / 255.0));
    }
    Dataset {
        features: Features::Pixels { dim, values },
        labels: pick.iter().map(|&i| labels[i] as usize).collect(),
        n_classes: 10,
        split,
        provenance,
    }
}

fn load_idx_pair(images_path: &Path, labels_path: &Path) -> Result<(IdxImages, Vec<u8>)> {
    let images = parse_idx_images(&read_file(images_path)?)?;
    let labels = parse_idx_labels(&read_file(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::Format {
            offset: 4,
            message: format!("{} images but {} labels", images.len(), labels.len()),
        });
    }
    Ok((images, labels))
}

/// `n` images drawn at random (seeded) from an IDX image/label pair.
pub fn load_mnist(images_path: &Path, labels_path: &Path, n: usize, seed: u64) -> Result<Dataset> {
    let (images, labels) = load_idx_pair(images_path, labels_path)?;
    if n == 0 || n > labels.len() {
        return Err(Error::invalid(format!(
            "requested {n} images, file has {}",
            labels.len()
        )));
    }
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    let prov = Provenance::Mnist {
        images: images_path.display().to_string(),
        labels: labels_path.display().to_string(),
        n,
        seed,
    };
    Ok(pixel_dataset(&images, &labels, &idx, Split::Train, prov))
}

/// Every image of an IDX pair, in file order, as a test split.
pub fn load_mnist_test(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (images, labels) = load_idx_pair(images_path, labels_path)?;
    let idx: Vec<usize> = (0..labels.len()).collect();
    let prov = Provenance::Mnist {
        images: images_path.display().to_string(),
        labels: labels_path.display().to_string(),
        n: labels.len(),
        seed: 0,
    };
    Ok(pixel_dataset(&images, &labels, &idx, Split::Test, prov))
}
