use std::fs;
use std::path::{Path, PathBuf};

use super::grid_file::{load_grid, save_grid, GRID_EXTENSION};
use crate::encoder::Grid;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub label: usize,
    pub modality: Modality,
    pub data: Tensor<f32>,
}

/// Immutable in-memory index of a bimodal dataset. Labels are dense
/// `0..num_identities` following the sorted identity names.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    grid: Grid,
    identities: Vec<String>,
    images: Vec<ImageRecord>,
    by_identity: Vec<[Vec<usize>; 2]>,
}

impl DatasetIndex {
    /// Builds an index from `(identity name, modality, image)` triples.
    pub fn from_images(grid: Grid, items: Vec<(String, Modality, Tensor<f32>)>) -> Result<Self> {
        let mut names: Vec<String> = items.iter().map(|(n, _, _)| n.clone()).collect();
        names.sort();
        names.dedup();
        let mut by_identity = vec![[Vec::new(), Vec::new()]; names.len()];
        let mut images = Vec::with_capacity(items.len());
        for (name, modality, data) in items {
            if data.shape() != grid.shape().as_slice() {
                return Err(Error::invalid(format!(
                    "image of `{name}` has shape {:?}, expected {:?}",
                    data.shape(),
                    grid.shape()
                )));
            }
            let label = names.binary_search(&name).expect("name present");
            by_identity[label][modality.tag() as usize].push(images.len());
            images.push(ImageRecord {
                label,
                modality,
                data,
            });
        }
        let index = Self {
            grid,
            identities: names,
            images,
            by_identity,
        };
        index.validate()?;
        Ok(index)
    }

    fn validate(&self) -> Result<()> {
        for (label, name) in self.identities.iter().enumerate() {
            for m in Modality::ALL {
                if self.by_identity[label][m.tag() as usize].is_empty() {
                    return Err(Error::invalid(format!("identity `{name}` has no {m} images")));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn num_identities(&self) -> usize {
        self.identities.len()
    }

    pub fn identity_names(&self) -> &[String] {
        &self.identities
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, idx: usize) -> &Tensor<f32> {
        &self.images[idx].data
    }

    /// Indices of the images of `label` in `modality`.
    pub fn indices(&self, label: usize, modality: Modality) -> &[usize] {
        &self.by_identity[label][modality.tag() as usize]
    }

    /// Splits off the last `fraction` of identities (at least one, at most
    /// all but two) as a held-out set. Both halves get dense labels.
    pub fn split_holdout(&self, fraction: f64) -> Result<(DatasetIndex, DatasetIndex)> {
        let n = self.num_identities();
        let held = ((n as f64) * fraction).round() as usize;
        if n < 3 || held == 0 || n - held < 2 {
            return Err(Error::config(format!(
                "cannot hold out {fraction} of {n} identities and keep 2 for training"
            )));
        }
        let cut = n - held;
        let part = |range: std::ops::Range<usize>| {
            let items = self
                .images
                .iter()
                .filter(|r| range.contains(&r.label))
                .map(|r| (self.identities[r.label].clone(), r.modality, r.data.clone()))
                .collect();
            DatasetIndex::from_images(self.grid, items)
        };
        Ok((part(0..cut)?, part(cut..n)?))
    }

    /// Writes `<root>/<identity>/<modality>/<nnnn>.grid`.
    pub fn save(&self, root: &Path) -> Result<()> {
        for (label, name) in self.identities.iter().enumerate() {
            for m in Modality::ALL {
                let dir = root.join(name).join(m.as_str());
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (i, &idx) in self.indices(label, m).iter().enumerate() {
                    save_grid(&dir.join(format!("{i:04}.{GRID_EXTENSION}")), self.image(idx))?;
                }
            }
        }
        Ok(())
    }

    /// Loads and validates a dataset directory.
    pub fn load(root: &Path) -> Result<Self> {
        let mut identity_dirs = sorted_entries(root, true)?;
        if identity_dirs.is_empty() {
            return Err(Error::format(root, "no identity directories"));
        }
        identity_dirs.sort();
        let mut items = Vec::new();
        let mut grid: Option<Grid> = None;
        for dir in identity_dirs {
            let name = dir
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::format(&dir, "identity directory name is not utf-8"))?
                .to_string();
            for m in Modality::ALL {
                let mdir = dir.join(m.as_str());
                if !mdir.is_dir() {
                    return Err(Error::format(&mdir, format!("missing {m} directory")));
                }
                let files: Vec<PathBuf> = sorted_entries(&mdir, false)?
                    .into_iter()
                    .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(GRID_EXTENSION))
                    .collect();
                if files.is_empty() {
                    return Err(Error::format(&mdir, format!("identity `{name}` has no {m} images")));
                }
                for f in files {
                    let t = load_grid(&f)?;
                    let g = Grid::new(t.shape()[0], t.shape()[1], t.shape()[2]);
                    match grid {
                        None => grid = Some(g),
                        Some(expected) if expected != g => {
                            return Err(Error::format(
                                &f,
                                format!("grid {:?} differs from dataset grid {:?}", g, expected),
                            ));
                        }
                        _ => {}
                    }
                    items.push((name.clone(), m, t));
                }
            }
        }
        DatasetIndex::from_images(grid.expect("at least one image"), items)
    }
}

fn sorted_entries(dir: &Path, dirs: bool) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() == dirs {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// A `2PK` training batch: `P` identities with `K` visible and `K` thermal
/// images each.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub modalities: Vec<Modality>,
    /// Source index of every image in the dataset.
    pub sources: Vec<usize>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Checks the `P` identities x (`K` visible + `K` thermal) composition.
    pub fn check_composition(&self, p: usize, k: usize) -> Result<()> {
        if self.len() != 2 * p * k || self.labels.len() != self.len() || self.modalities.len() != self.len() {
            return Err(Error::invalid(format!("batch size {} != 2PK = {}", self.len(), 2 * p * k)));
        }
        let mut counts = std::collections::BTreeMap::<usize, [usize; 2]>::new();
        for (&l, &m) in self.labels.iter().zip(&self.modalities) {
            counts.entry(l).or_default()[m.tag() as usize] += 1;
        }
        if counts.len() != p {
            return Err(Error::invalid(format!("{} identities, expected {p}", counts.len())));
        }
        if let Some((l, c)) = counts.iter().find(|(_, c)| **c != [k, k]) {
            return Err(Error::invalid(format!("identity {l} has {c:?} images, expected [{k}, {k}]")));
        }
        Ok(())
    }
}
