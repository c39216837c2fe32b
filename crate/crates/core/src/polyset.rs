//! Polyhedra-set JSON files: a ray system plus a list of candidates.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encode::GridSpec;
use crate::error::{Error, Result};
use crate::polyhedron::StarPolyhedron;
use crate::rays::RaySystem;
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyItem {
    /// `(z, y, x)`.
    pub center: [f64; 3],
    pub prob: f64,
    pub dists: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolySet {
    #[serde(default = "default_version")]
    pub version: String,
    pub rays: RaySystem,
    pub source_shape: [usize; 3],
    pub grid: GridSpec,
    pub items: Vec<PolyItem>,
}

fn default_version() -> String {
    FORMAT_VERSION.to_string()
}

impl PolySet {
    pub fn from_polyhedra(
        rays: &RaySystem,
        source_shape: [usize; 3],
        grid: GridSpec,
        polys: &[StarPolyhedron],
    ) -> Self {
        Self {
            version: default_version(),
            rays: rays.clone(),
            source_shape,
            grid,
            items: polys
                .iter()
                .map(|p| PolyItem {
                    center: p.center(),
                    prob: p.prob(),
                    dists: p.dists().to_vec(),
                })
                .collect(),
        }
    }

    /// Builds the polyhedra in file order with a shared ray system.
    pub fn polyhedra(&self) -> Result<(Arc<RaySystem>, Vec<StarPolyhedron>)> {
        self.rays.validate()?;
        let rays = Arc::new(self.rays.clone());
        let polys = self
            .items
            .iter()
            .map(|it| StarPolyhedron::new(it.center, it.dists.clone(), it.prob, rays.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok((rays, polys))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: PolySet = serde_json::from_str(&text)?;
        if set.source_shape.iter().any(|&s| s == 0) {
            return Err(Error::EmptyShape(set.source_shape));
        }
        Ok(set)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
