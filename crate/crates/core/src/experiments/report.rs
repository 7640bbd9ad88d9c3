use super::Result;
use std::path::Path;

pub fn cmd_report(_run_dir: &Path) -> Result<String> {
    todo!()
}
