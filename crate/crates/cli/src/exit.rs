use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Input problems detected by the CLI itself rather than by the core crate.
#[derive(Debug, Error)]
pub enum InputError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Data(String),
}

/// Maps an error chain to a process exit code. The first classified error
/// in the chain wins; anything unclassified is a runtime abort.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<InputError>() {
            return match e {
                InputError::Config(_) => EXIT_CONFIG,
                InputError::Data(_) => EXIT_DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<s4_core::Error>() {
            if e.is_config_error() {
                return EXIT_CONFIG;
            }
            if e.is_data_error() {
                return EXIT_DATA;
            }
            return EXIT_RUNTIME;
        }
    }
    EXIT_RUNTIME
}
