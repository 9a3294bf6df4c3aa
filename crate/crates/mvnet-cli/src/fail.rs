//! CLI failure type. Exit code 2 means the input was unusable (bad file,
//! bad flag value, malformed config); exit code 1 means the run itself
//! failed (assertion, divergence, a check that did not pass).

use std::fmt;

use mvnet_core::error::Error as CoreError;

#[derive(Debug)]
pub struct Fail {
    pub code: i32,
    pub msg: String,
}

impl fmt::Display for Fail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Fail {}

pub fn input(msg: impl Into<String>) -> Fail {
    Fail { code: 2, msg: msg.into() }
}

pub fn run(msg: impl Into<String>) -> Fail {
    Fail { code: 1, msg: msg.into() }
}

impl From<CoreError> for Fail {
    fn from(e: CoreError) -> Fail {
        let code = match e {
            CoreError::Input(_) | CoreError::Dimension(_) | CoreError::Domain(_) => 2,
            CoreError::Contract(_) => 1,
        };
        Fail { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Fail {
        input(e.to_string())
    }
}
