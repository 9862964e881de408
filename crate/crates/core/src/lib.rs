//! Multi-view projection-based 3D instance segmentation for terrestrial
//! laser scanning (TLS) point clouds.
//!
//! The pipeline takes registered per-station scans, renders each station into
//! spherical range/intensity panoramas, back-projects externally produced 2D
//! instance masks into 3D partial instances, and fuses them across views with
//! a kNN/IoU graph clustered by the highly-connected-subgraphs algorithm.
//! Fused instances can be transferred onto a merged cloud as pseudo-labels
//! for a downstream 3D network, and evaluated against sparse reference
//! annotations.
//!
//! Modules follow the processing order:
//!
//! - [`scan_io`]: PLY scan loading, voxel downsampling, cloud merging
//! - [`projection`]: spherical panoramas, Lanczos compression, back-projection
//! - [`masks`]: the 2D instance-mask exchange format
//! - [`fusion`]: oriented bounding boxes, the fusion graph, HCS clustering
//! - [`label_transfer`]: pseudo-label transfer, refinement, sphere sampling
//! - [`eval`]: Hungarian matching against sparse references, metrics, NMS
//! - [`synth`]: synthetic scene simulator used as the end-to-end test oracle
//! - [`pipeline`]: file-based batch commands wiring the above together
//!
//! Heavy inner loops run on rayon when the `parallel` feature (default) is
//! enabled; without it the crate is fully sequential with identical results.

pub mod config;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod label_transfer;
pub mod masks;
mod par;
pub mod pipeline;
pub mod ply;
pub mod projection;
pub mod provenance;
pub mod scan_io;
pub mod spatial;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};

/// True when the crate was built with the `parallel` feature.
pub const fn parallelism_enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Caps the global worker pool. No-op (with a warning) in sequential builds.
/// Must be called before the first parallel operation to take effect.
pub fn set_thread_cap(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            log::warn!("thread pool already initialized: {err}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        log::warn!("built without the `parallel` feature; --threads has no effect");
    }
}
