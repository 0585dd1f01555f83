use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use drivenhunt::data::{self, encode_idx, load_mnist, IdxImages, ModArithSpec, ModOp};
use drivenhunt::{Error, Result};
use serde_json::json;

use crate::manifest::{create_dir, write_file, Manifest};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DataTask {
    Modulo,
    Mnist,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Op {
    Division,
    Addition,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long, value_enum)]
    task: DataTask,
    /// Prime modulus.
    #[arg(long, default_value_t = 97)]
    p: u64,
    #[arg(long, value_enum, default_value = "division")]
    op: Op,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data/mnist/train-images-idx3-ubyte")]
    images: PathBuf,
    #[arg(long, default_value = "data/mnist/train-labels-idx1-ubyte")]
    labels: PathBuf,
    /// MNIST subsample size.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(a: Args, root: &Path) -> Result<PathBuf> {
    match a.task {
        DataTask::Modulo => modulo(&a, root),
        DataTask::Mnist => mnist(&a, root),
    }
}

fn modulo(a: &Args, root: &Path) -> Result<PathBuf> {
    let spec = ModArithSpec {
        p: a.p,
        op: match a.op {
            Op::Division => ModOp::Division,
            Op::Addition => ModOp::Addition,
        },
        train_fraction: a.train_fraction,
        beta: a.beta,
        seed: a.seed,
    };
    let (train, test) = data::split_dataset(&spec).map_err(|e| Error::Config(e.to_string()))?;
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| root.join(format!("data-modulo-p{}-{:?}-s{}", a.p, a.op, a.seed).to_lowercase()));
    create_dir(&dir)?;
    let mut files = Vec::new();
    for (name, set) in [("train.tsv", &train), ("test.tsv", &test)] {
        let mut buf = Vec::new();
        set.write_tsv(&mut buf).expect("writing to memory");
        let path = dir.join(name);
        write_file(&path, &buf)?;
        files.push(path);
    }
    let params = json!({
        "task": "modulo",
        "spec": spec,
        "sizes": { "train": train.len(), "test": test.len(), "total": train.len() + test.len() },
    });
    Manifest::new("data-gen", a.seed, params).write(&dir, &files)?;
    Ok(dir)
}

fn mnist(a: &Args, root: &Path) -> Result<PathBuf> {
    let set = load_mnist(&a.images, &a.labels, a.n, a.seed)?;
    let (dim, values) = match &set.features {
        data::Features::Pixels { dim, values } => (*dim, values),
        data::Features::Tokens { .. } => unreachable!("MNIST loads pixels"),
    };
    let side = (dim as f64).sqrt() as usize;
    // pixels were stored as byte / 255, which inverts exactly
    let images = IdxImages {
        rows: side,
        cols: dim / side.max(1),
        pixels: values.iter().map(|v| (v * 255.0).round() as u8).collect(),
    };
    let labels: Vec<u8> = set.labels.iter().map(|&l| l as u8).collect();
    let (img, lab) = encode_idx(&images, &labels);
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| root.join(format!("data-mnist-n{}-s{}", a.n, a.seed)));
    create_dir(&dir)?;
    let img_path = dir.join("train-images-idx3-ubyte");
    let lab_path = dir.join("train-labels-idx1-ubyte");
    write_file(&img_path, &img)?;
    write_file(&lab_path, &lab)?;
    let mut counts = [0usize; 10];
    for &l in &labels {
        counts[l as usize] += 1;
    }
    let mut f = Vec::new();
    writeln!(f, "label\tcount").expect("writing to memory");
    for (l, c) in counts.iter().enumerate() {
        writeln!(f, "{l}\t{c}").expect("writing to memory");
    }
    let counts_path = dir.join("label_counts.tsv");
    write_file(&counts_path, &f)?;
    let params = json!({
        "task": "mnist",
        "images": a.images,
        "labels": a.labels,
        "sizes": { "train": set.len() },
    });
    Manifest::new("data-gen", a.seed, params).write(&dir, &[img_path, lab_path, counts_path])?;
    Ok(dir)
}
