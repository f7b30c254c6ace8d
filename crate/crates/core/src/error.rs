use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("LED height {h_led} m must exceed device height {h_bd} m")]
    CellUndefined { h_led: f64, h_bd: f64 },

    #[error("distance {0} m is below the 1 m minimum of the path-loss model")]
    ModelRange(f64),

    #[error("LED and device positions coincide")]
    CoincidentPositions,

    #[error("device at z = {device_z} m is not below the LED plane at z = {led_z} m")]
    DeviceAboveLed { device_z: f64, led_z: f64 },

    #[error("no proper frequency-pair assignment exists with a palette of {palette} pairs (stuck at LED {led})")]
    Uncolorable { palette: usize, led: u8 },

    #[error("sample rate {rate} Hz is below the required {required} Hz")]
    SampleRateTooLow { rate: f64, required: f64 },

    #[error("waypoint ({x}, {y}) lies outside the room")]
    WaypointOutsideRoom { x: f64, y: f64 },

    #[error("trajectory has zero length")]
    DegenerateTrajectory,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
