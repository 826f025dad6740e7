//! Loader for the ShapeNet-ViPC layout. Not implemented: the desk-scale
//! pipeline trains on [`crate::data`] instead.
//!
//! Expected layout under the dataset root:
//!
//! ```text
//! ShapeNetViPC-Dataset/
//!   ShapeNetViPC-Partial/<category>/<object>/rendering/<view>.dat
//!   ShapeNetViPC-GT/<category>/<object>/rendering/<view>.dat
//!   ShapeNetViPC-View/<category>/<object>/rendering/<view>.png
//!   train_list.txt, test_list.txt   # one `<category>/<object>/rendering/<view>` per line
//! ```
//!
//! Partial and ground-truth `.dat` files hold pickled N×3 float arrays and
//! the views are 224×224 RGB renders.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{HarnessError, Result};

pub fn load_vipc(root: &Path) -> Result<Dataset> {
    Err(HarnessError::Data(format!(
        "ShapeNet-ViPC ingestion is not implemented ({})",
        root.display()
    )))
}
