use super::Result;
use crate::config::RunConfig;
use std::path::Path;

pub fn cmd_subsets(_cfg: &RunConfig, _out_dir: &Path) -> Result<()> {
    todo!()
}
