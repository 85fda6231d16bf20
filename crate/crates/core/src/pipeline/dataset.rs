use crate::error::{Error, Result};
use crate::signal::synth::{Network, PLATE_DIMS};
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Projected,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Projected => "projected",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Stage::Raw),
            "projected" => Ok(Stage::Projected),
            other => Err(Error::Format(format!("unknown dataset stage `{other}`"))),
        }
    }
}

/// Images stacked along mode 3 with their damage positions and damage-site ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub images: Tensor3,
    /// (x mm, y mm) per image.
    pub labels: Vec<(f64, f64)>,
    /// Damage-site id per image; augmented copies share a group.
    pub groups: Vec<u32>,
    pub material: String,
    pub network: Network,
    pub stage: Stage,
}

impl DomainDataset {
    pub fn new(
        images: Tensor3,
        labels: Vec<(f64, f64)>,
        groups: Vec<u32>,
        material: &str,
        network: Network,
        stage: Stage,
    ) -> Result<Self> {
        let n = images.dims().2;
        if labels.len() != n || groups.len() != n {
            return Err(Error::shape(format!(
                "{n} images but {} labels and {} group ids",
                labels.len(),
                groups.len()
            )));
        }
        let (w, h) = PLATE_DIMS;
        if let Some(&(x, y)) = labels
            .iter()
            .find(|(x, y)| !(0.0..=w).contains(x) || !(0.0..=h).contains(y))
        {
            return Err(Error::domain(format!("label ({x}, {y}) lies outside the plate")));
        }
        Ok(Self {
            images,
            labels,
            groups,
            material: material.to_string(),
            network,
            stage,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (rows, cols) of every image.
    pub fn image_dims(&self) -> (usize, usize) {
        let (i1, i2, _) = self.images.dims();
        (i1, i2)
    }

    /// Distinct group ids in first-appearance order.
    pub fn group_ids(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for &g in &self.groups {
            if !out.contains(&g) {
                out.push(g);
            }
        }
        out
    }

    /// Images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::shape("empty dataset subset"));
        }
        let (i1, i2) = self.image_dims();
        let mut data = Vec::with_capacity(indices.len() * i1 * i2);
        for &k in indices {
            if k >= self.len() {
                return Err(Error::shape(format!("image index {k} out of range {}", self.len())));
            }
            data.extend_from_slice(self.images.slice_values(k));
        }
        Ok(Self {
            images: Tensor3::from_vec((i1, i2, indices.len()), data)?,
            labels: indices.iter().map(|&k| self.labels[k]).collect(),
            groups: indices.iter().map(|&k| self.groups[k]).collect(),
            material: self.material.clone(),
            network: self.network,
            stage: self.stage,
        })
    }

    /// Indices of every image whose group is in `groups`.
    pub fn indices_of_groups(&self, groups: &[u32]) -> Vec<usize> {
        (0..self.len()).filter(|&k| groups.contains(&self.groups[k])).collect()
    }

    /// Same metadata, new image tensor (e.g. after projection).
    pub fn with_images(&self, images: Tensor3, stage: Stage) -> Result<Self> {
        if images.dims().2 != self.len() {
            return Err(Error::shape("replacement tensor has a different image count"));
        }
        Ok(Self {
            images,
            stage,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            images: Tensor3::zeros(1, 1, 1).expect("unit tensor"),
            labels: self.labels.clone(),
            groups: self.groups.clone(),
            material: self.material.clone(),
            network: self.network,
            stage: self.stage,
        }
    }
}
