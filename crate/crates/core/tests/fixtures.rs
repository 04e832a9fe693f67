//! Bundled data and configs, checked against parsers written independently
//! of the library's loaders.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kronfisher::config::RunConfig;
use kronfisher::experiments::{iris, mnist_subset};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn be_u32(b: &[u8]) -> usize {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize
}

#[test]
fn iris_matches_a_plain_split_parser() {
    let text = std::fs::read_to_string(root().join("data/iris.csv")).unwrap();
    let mut counts = BTreeMap::new();
    let mut first = Vec::new();
    for (i, line) in text.lines().skip(1).filter(|l| !l.is_empty()).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 5);
        *counts.entry(cells[4].to_string()).or_insert(0usize) += 1;
        if i == 0 {
            first = cells[..4].iter().map(|c| c.parse::<f64>().unwrap()).collect();
        }
    }
    let ds = iris().unwrap();
    assert_eq!(ds.len(), counts.values().sum::<usize>());
    assert_eq!(ds.class_counts(), counts.values().copied().collect::<Vec<_>>());
    assert_eq!(ds.features.row(0), first.as_slice());
}

fn idx(path: &Path) -> (Vec<usize>, Vec<u8>) {
    let bytes = std::fs::read(path).unwrap();
    let ndim = bytes[3] as usize;
    assert_eq!(&bytes[..3], &[0, 0, 8]);
    let dims: Vec<usize> = (0..ndim).map(|d| be_u32(&bytes[4 + 4 * d..])).collect();
    (dims, bytes[4 + 4 * ndim..].to_vec())
}

#[test]
fn mnist_subset_matches_raw_idx() {
    let d = root().join("data/mnist");
    let (img_dims, pixels) = idx(&d.join("train-images-idx3-ubyte"));
    let (lab_dims, labels) = idx(&d.join("train-labels-idx1-ubyte"));
    assert_eq!(img_dims, vec![2000, 28, 28]);
    assert_eq!(lab_dims, vec![2000]);
    let (test_dims, _) = idx(&d.join("t10k-images-idx3-ubyte"));
    assert_eq!(test_dims, vec![500, 28, 28]);

    let s = mnist_subset().unwrap();
    assert_eq!(s.train.sample_shape(), &[1, 28, 28]);
    assert_eq!(s.train.labels.iter().map(|&l| l as u8).collect::<Vec<_>>(), labels);
    let row = s.train.features.row(7);
    let raw = &pixels[7 * 784..8 * 784];
    assert!(row.iter().zip(raw).all(|(v, &p)| (v * 255.0 - f64::from(p)).abs() < 1e-9));
    assert!(s.train.class_counts().iter().all(|&c| c == 200));
}

#[test]
fn shipped_configs_load_and_validate() {
    for name in ["mnist_mlp.json", "mnist_compare.json", "toy_conv.json", "iris_landscape.json"] {
        let cfg = RunConfig::load(&root().join("configs").join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let splits = cfg.load_data().unwrap();
        let mut shape = splits.train.sample_shape().to_vec();
        if shape.is_empty() {
            shape.push(splits.train.feature_dim());
        }
        cfg.model.build(&shape, splits.train.class_count, cfg.seed).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn schema_lists_every_config_key() {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root().join("configs/run_config.schema.json")).unwrap()).unwrap();
    let props: Vec<&String> = schema["properties"].as_object().unwrap().keys().collect();
    let cfg = RunConfig::load(&root().join("configs/toy_conv.json")).unwrap();
    let value = serde_json::to_value(&cfg).unwrap();
    for key in value.as_object().unwrap().keys() {
        assert!(props.contains(&key), "schema lacks `{key}`");
    }
    assert_eq!(schema["additionalProperties"], false);
}
