#![allow(dead_code)]
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use exformer_core::model::{ModelConfig, QkConv};

pub const BIN: &str = env!("CARGO_BIN_EXE_exformer");

pub fn exformer(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = exformer(args);
    assert!(
        out.status.success(),
        "exformer {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Synthetic data plus a small config inside `dir`; returns the config path.
pub fn tiny_setup(dir: &Path, n: usize, max_epochs: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth-data", "--out-dir", data.to_str().unwrap(), "--n", &n.to_string(), "--n-covariates", "3", "--seed", "5"]);
    let cfg = dir.join("tiny.toml");
    fs::write(
        &cfg,
        format!(
            r#"pair = "SYN"
seed = 3

[data]
manifest = "data/manifest.json"

[model]
window = 5
heads = 1
factor = 4
dropout = 0.1

[train]
learning_rate = 0.005
batch_size = 32
max_epochs = {max_epochs}
patience = 3
"#
        ),
    )
    .unwrap();
    cfg
}

pub fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Parses a CSV into a header and string rows.
pub fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

pub fn column(path: &Path, name: &str) -> Vec<String> {
    let (h, rows) = table(path);
    let i = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name} in {h:?}"));
    rows.into_iter().map(|mut r| r.swap_remove(i)).collect()
}

/// Scalar weights a configuration reads, counted layer by layer.
pub fn closed_form_params(c: &ModelConfig) -> usize {
    let f = c.n_features;
    let de = c.embed_dim.unwrap_or(c.factor);
    let d = c.heads * c.factor;
    let ks: usize = c.kernels.iter().sum();
    let dense = |i: usize, o: usize| i * o + o;
    let mut n = f * de * 2;
    if c.use_dvs {
        n += dense(de, 1);
    }
    n += if c.use_msc {
        ks * d * f * de + 3 * d + dense(3 * d, d)
    } else {
        dense(f * de, d)
    };
    if c.use_se {
        n += 2 * d * (d / c.se_reduction);
    }
    n += if c.trend_attention {
        let per_head_in = match c.qk_conv {
            QkConv::Grouped => c.factor,
            QkConv::Full => d,
        };
        2 * (ks * d * per_head_in + 3 * d) + dense(d, d) + dense(3 * d, d)
    } else {
        4 * dense(d, d)
    };
    n += dense(d, 2 * d) + dense(2 * d, d);
    n += 3 * (d * d * 2 + d);
    n + dense(d, 1)
}
