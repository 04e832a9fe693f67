//! Datasets: MNIST IDX files, numeric CSV, synthetic quadratics, batching.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{gaussian_fill, SeededRng, Tensor};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `N x d` or `N x c x H x W`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub name: String,
    /// Class names in index order, when the source had them.
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize, name: impl Into<String>) -> Result<Self> {
        if features.ndim() < 2 || features.rows() == 0 {
            return Err(Error::dim("dataset features must be N x ... with N >= 1"));
        }
        if features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!("label {bad} outside [0, {class_count})")));
        }
        features.ensure_finite("dataset features")?;
        Ok(Self {
            features,
            labels,
            class_count,
            name: name.into(),
            class_names: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample feature shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Features and labels of the given samples, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("sample index {i} out of range")));
            }
            data.extend_from_slice(&self.features.data()[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Ok((Tensor::new(&shape, data)?, labels))
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        let (features, labels) = self.gather(&(0..n).collect::<Vec<_>>())?;
        let mut ds = Dataset::new(features, labels, self.class_count, self.name.clone())?;
        ds.class_names.clone_from(&self.class_names);
        Ok(ds)
    }

    /// Same samples with features flattened to `N x d` and replaced.
    pub fn with_features(&self, features: Tensor) -> Result<Dataset> {
        let mut ds = Dataset::new(features, self.labels.clone(), self.class_count, self.name.clone())?;
        ds.class_names.clone_from(&self.class_names);
        Ok(ds)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(path, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let r = be_u32(bytes, 8, path)? as usize;
    let c = be_u32(bytes, 12, path)? as usize;
    let need = n * r * c;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::format(
            path,
            format!("truncated payload: {} of {need} pixel bytes", payload.len()),
        ));
    }
    Ok((n, r, c, payload[..need].to_vec()))
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(path, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::format(path, format!("truncated payload: {} of {n} labels", payload.len())));
    }
    Ok(payload[..n].to_vec())
}

/// Loads an IDX image/label pair as `N x 1 x rows x cols` features in `[0, 1]`.
pub fn load_mnist_idx(images: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let (n, r, c, pixels) = parse_idx_images(&read_file(images)?, images)?;
    let labs = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    if labs.len() != n {
        return Err(Error::invalid(format!(
            "{} images but {} labels ({} vs {})",
            n,
            labs.len(),
            images.display(),
            labels_path.display()
        )));
    }
    let keep = limit.map_or(n, |l| l.min(n));
    if keep == 0 {
        return Err(Error::invalid("dataset would be empty"));
    }
    let per = r * c;
    let features = pixels[..keep * per].iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labs[..keep].iter().map(|&l| l as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::format(labels_path, format!("label {bad} > 9")));
    }
    let features = Tensor::new(&[keep, 1, r, c], features)?;
    Dataset::new(features, labels, 10, "mnist")
}

/// Loads a headed numeric CSV; `label_column` names the class column.
///
/// Class indices follow first appearance in the file.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::format(path, format!("no column named '{label_column}'")))?;
    let width = headers.len();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut classes: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    for (row_no, rec) in reader.records().enumerate() {
        // header is line 1
        let line = row_no + 2;
        let rec = rec.map_err(|e| Error::format(path, format!("row {line}: {e}")))?;
        if rec.len() != width {
            return Err(Error::format(path, format!("row {line}: {} cells, expected {width}", rec.len())));
        }
        for (i, cell) in rec.iter().enumerate() {
            if i == label_idx {
                let name = cell.trim().to_string();
                let next = classes.len();
                let id = *classes.entry(name.clone()).or_insert_with(|| {
                    class_names.push(name);
                    next
                });
                labels.push(id);
            } else {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(path, format!("row {line}: '{cell}' is not a number")))?;
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::format(path, "no data rows"));
    }
    let n = labels.len();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv").to_string();
    let mut ds = Dataset::new(Tensor::new(&[n, width - 1], features)?, labels, classes.len(), name)?;
    ds.class_names = class_names;
    Ok(ds)
}

/// Random SPD matrix with eigenvalues log-spaced over `[1, condition_number]`
/// and a random minimiser.
pub fn synth_quadratic(dim: usize, condition_number: f64, seed: u64) -> Result<(Tensor, Vec<f64>)> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(condition_number >= 1.0) || !condition_number.is_finite() {
        return Err(Error::invalid("condition number must be >= 1"));
    }
    if dim == 1 && condition_number != 1.0 {
        return Err(Error::invalid("a 1-d quadratic has condition number 1"));
    }
    let mut rng = SeededRng::new(seed);
    let q = random_orthogonal(dim, &mut rng)?;
    let top = condition_number.log10();
    let eigs: Vec<f64> = (0..dim)
        .map(|i| {
            if dim == 1 {
                1.0
            } else {
                10f64.powf(top * i as f64 / (dim - 1) as f64)
            }
        })
        .collect();
    let a = q.matmul(&Tensor::from_diag(&eigs))?.matmul_nt(&q)?;
    let mut sym = a.clone();
    for i in 0..dim {
        for j in 0..dim {
            sym.set(i, j, 0.5 * (a.at(i, j) + a.at(j, i)));
        }
    }
    let theta_star = gaussian_fill(&mut rng, &[dim], 0.0, 1.0).into_data();
    Ok((sym, theta_star))
}

/// Orthogonal matrix from modified Gram-Schmidt on a Gaussian matrix
/// (columns are the basis).
fn random_orthogonal(n: usize, rng: &mut SeededRng) -> Result<Tensor> {
    let g = gaussian_fill(rng, &[n, n], 0.0, 1.0);
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| g.at(i, j)).collect()).collect();
    for j in 0..n {
        for k in 0..j {
            let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
            let (head, tail) = cols.split_at_mut(j);
            for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                *x -= dot * y;
            }
        }
        let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::invalid("degenerate random basis"));
        }
        cols[j].iter_mut().for_each(|x| *x /= norm);
    }
    let mut q = Tensor::zeros(&[n, n]);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    Ok(q)
}

/// One epoch of mini-batches as index lists. The last short batch is kept.
pub fn batch_iter(n: usize, batch_size: usize, seed: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("cannot batch an empty dataset"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        SeededRng::new(seed).shuffle(&mut order);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
