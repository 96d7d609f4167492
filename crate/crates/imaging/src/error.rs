use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not a NIfTI-1 single-file stream: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("two-file NIfTI (ni1) is not supported; convert to a single .nii")]
    UnsupportedForm,
    #[error("unsupported NIfTI datatype code {0} (supported: uint8, int16, float32)")]
    UnsupportedDatatype(i16),
    #[error("truncated NIfTI stream: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("NIfTI dim[{axis}] = {value} is outside [1, 4096]")]
    DimOutOfRange { axis: usize, value: i64 },
    #[error("bad sizeof_hdr {0}, expected 348")]
    BadHeaderSize(i32),
    #[error("non-finite voxel at index {0} after scaling")]
    NonFinite(usize),
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("label {label} at pixel {index} is outside 0..=10")]
    BadLabel { label: u8, index: usize },
    #[error("class `{0}` has no pixels and is not allowed to be absent")]
    AbsentClass(String),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Invalid { op, detail: detail.into() }
}

pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
