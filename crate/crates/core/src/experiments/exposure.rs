use super::Result;
use crate::config::RunConfig;
use std::path::Path;

pub fn cmd_exposure(_cfg: &RunConfig, _which: &[String], _out_dir: &Path) -> Result<()> {
    todo!()
}
