//! Manifest files and in-memory datasets.
//!
//! A manifest is a CSV file with the header `sample_id,path,class_index`;
//! image paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use recipe_core::image::{read_ppm, ImageU8};

pub const MANIFEST_HEADER: &str = "sample_id,path,class_index";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory image paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, root: &Path, classes: usize) -> anyhow::Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            other => bail!("manifest must start with {MANIFEST_HEADER:?}, got {:?}", other.map(|(_, l)| l)),
        }
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, path, class] = fields[..] else {
                bail!("manifest line {}: expected 3 fields, got {}", n + 1, fields.len());
            };
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                bail!("manifest line {}: sample id {id:?} must be non-empty without whitespace", n + 1);
            }
            let class: usize = class.parse().with_context(|| format!("manifest line {}: class index {class:?}", n + 1))?;
            if class >= classes {
                bail!("manifest line {}: class index {class} outside [0, {classes})", n + 1);
            }
            if !seen.insert(id.to_string()) {
                bail!("manifest line {}: duplicate sample id {id}", n + 1);
            }
            entries.push(ManifestEntry { id: id.to_string(), path: PathBuf::from(path), class });
        }
        Ok(Self { root: root.to_path_buf(), entries })
    }

    pub fn read(path: &Path, classes: usize) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), classes)
            .with_context(|| format!("in manifest {}", path.display()))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            writeln!(s, "{},{},{}", e.id, e.path.display(), e.class).expect("writing to a string");
        }
        s
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        fs::write(path, self.to_text()).with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.class).collect()
    }
}

/// Decoded images with their ids and labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub images: Vec<ImageU8>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn load(manifest: &Manifest) -> anyhow::Result<Self> {
        let images = manifest
            .entries
            .par_iter()
            .map(|e| {
                let path = manifest.resolve(e);
                read_ppm(&path).with_context(|| format!("loading sample {} from {}", e.id, path.display()))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        Ok(Self {
            ids: manifest.entries.iter().map(|e| e.id.clone()).collect(),
            images,
            labels: manifest.labels(),
        })
    }

    pub fn read(path: &Path, classes: usize) -> anyhow::Result<Self> {
        Self::load(&Manifest::read(path, classes)?)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Concatenation of two datasets; sample ids must stay unique.
    pub fn merged(mut self, other: Dataset) -> anyhow::Result<Self> {
        let ids: HashSet<&String> = self.ids.iter().collect();
        if let Some(dup) = other.ids.iter().find(|id| ids.contains(id)) {
            bail!("cannot merge splits: sample id {dup} appears in both");
        }
        self.ids.extend(other.ids);
        self.images.extend(other.images);
        self.labels.extend(other.labels);
        Ok(self)
    }

    /// Sample indices grouped by class.
    pub fn by_class(&self, classes: usize) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); classes];
        for (i, &c) in self.labels.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }
}
