pub use sdnet;
