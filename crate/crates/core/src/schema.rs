//! Schema versioning for every file this crate writes.

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "1.0";
pub const SCHEMA_MAJOR: u32 = 1;

pub fn schema_version() -> String {
    SCHEMA_VERSION.to_string()
}

/// Accepts any minor revision of the supported major version.
pub fn check(version: &str, what: &str) -> Result<()> {
    let major = version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok());
    if major == Some(SCHEMA_MAJOR) {
        Ok(())
    } else {
        Err(Error::SchemaVersion {
            what: what.to_string(),
            found: version.to_string(),
            supported: SCHEMA_MAJOR,
        })
    }
}
