//! Level-of-detail construction: decimation with correspondence tracking,
//! surface mapping back to the input and midpoint subdivision.

pub mod decimate;
pub mod flatten;
pub mod hierarchy;
pub mod quadric;
pub mod subdivide;
pub mod surface_map;

pub use decimate::{quadric_decimate, CollapseRecord, Decimation};
pub use hierarchy::{
    build_hierarchy, coarse_domain_points, load_hierarchy, save_hierarchy, HierarchyOptions, LodHierarchy, LodLevel,
    DEFAULT_LEVELS, DEFAULT_TARGET_FACES,
};
pub use subdivide::{subdivide_connectivity, Subdivision};
pub use surface_map::{MapMethod, SurfaceMap};
