use meshpyr::network::NetError;
use meshpyr::pyramid::PyramidError;
use meshpyr::MeshError;

pub const VALIDATION: u8 = 1;
pub const USAGE: u8 = 2;
pub const IO: u8 = 3;

#[derive(Debug)]
pub struct Fail {
    pub code: u8,
    pub msg: String,
}

impl Fail {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self { code: VALIDATION, msg: msg.into() }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: USAGE, msg: msg.into() }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Self { code: IO, msg: msg.into() }
    }
}

fn mesh_code(e: &MeshError) -> u8 {
    match e {
        MeshError::Parse { .. } | MeshError::Io(_) => IO,
        _ => VALIDATION,
    }
}

impl From<MeshError> for Fail {
    fn from(e: MeshError) -> Self {
        Self { code: mesh_code(&e), msg: e.to_string() }
    }
}

impl From<PyramidError> for Fail {
    fn from(e: PyramidError) -> Self {
        let code = match &e {
            PyramidError::InvalidConfig(_) => USAGE,
            PyramidError::SelfParam(_) | PyramidError::Overlay(_) => VALIDATION,
            PyramidError::Mesh(m) => mesh_code(m),
            _ => IO,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<NetError> for Fail {
    fn from(e: NetError) -> Self {
        let code = match &e {
            NetError::Checkpoint(_) | NetError::Io(_) | NetError::Json(_) => IO,
            _ => VALIDATION,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}
