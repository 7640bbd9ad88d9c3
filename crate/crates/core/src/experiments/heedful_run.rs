use super::Result;
use crate::config::RunConfig;
use std::path::Path;

pub fn cmd_heedful(_cfg: &RunConfig, _out_dir: &Path) -> Result<()> {
    todo!()
}
