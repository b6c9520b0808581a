//! Tetrahedral mesh generation and adaptation.
//!
//! The crate goes from a closed triangle surface or a point cloud to a
//! graded tetrahedral mesh:
//!
//! - [`surface`] removes near-flat triangles from input tessellations;
//! - [`delaunay`] and [`tetra`] build Delaunay meshes on exact [`geom`] predicates;
//! - [`aed`] refines to a quality bound with anisotropic encroachment near the boundary;
//! - [`sliver`] finds and removes slivers, padding the ones locked against the boundary;
//! - [`smooth`] moves vertices to minimize an elastic energy;
//! - [`indicators`] computes residual error indicators of a discrete field;
//! - [`amr`] turns indicator rankings into a sizing field and refines toward it;
//! - [`io`] reads and writes `.node`/`.ele`/`.face`/`.edge` files, and
//!   [`pipeline`] chains the stages from a config file.
//!
//! All meshes live in [`mesh::TetMesh`]. The [`guide`] module holds the
//! user guide, with every example compiled and run as a doctest.
//!
//! ```
//! use tetamr::delaunay::delaunay_from_points;
//! use tetamr::gen::random_points;
//! use tetamr::mesh::validate;
//!
//! let m = delaunay_from_points(&random_points(100, 7)).unwrap();
//! assert!(validate(&m).is_valid());
//! ```

pub mod aed;
pub mod delaunay;
pub mod gen;
pub mod geom;
pub mod mesh;
pub mod refine2d;
pub mod surface;
pub mod tetra;
pub mod sliver;
pub mod smooth;
pub mod indicators;
pub mod amr;
pub mod io;
pub mod pipeline;

/// The user guide, also published as a book from `book/`.
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/delaunay.md")]
    pub mod delaunay {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    pub mod refinement {}
    #[doc = include_str!("../../../book/src/slivers.md")]
    pub mod slivers {}
    #[doc = include_str!("../../../book/src/smoothing.md")]
    pub mod smoothing {}
    #[doc = include_str!("../../../book/src/indicators.md")]
    pub mod indicators {}
    #[doc = include_str!("../../../book/src/amr.md")]
    pub mod amr {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
