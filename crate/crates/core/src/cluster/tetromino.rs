//! Seed shapes for plane creation.
//!
//! A regular plane is first created from four atomic cells forming a
//! tetromino. Fitting a plane to four endpoints on a grid line is ambiguous,
//! so the two I orientations are excluded, leaving 17 fixed shapes: one O,
//! four T, four S/Z, and eight L/J orientations.
//!
//! Each shape is normalized so that its first cell in row-major order is the
//! anchor at offset (0, 0). Every placement on the grid is therefore anchored
//! at exactly one cell, which deduplicates placements by construction.

/// (row, col) offsets of the 17 valid tetromino shapes relative to their
/// anchor cell. The anchor is the row-major first cell of the shape.
pub const SHAPES: [[(i32, i32); 4]; 17] = [
    // O
    [(0, 0), (0, 1), (1, 0), (1, 1)],
    // T, stem down / up / right / left
    [(0, 0), (0, 1), (0, 2), (1, 1)],
    [(0, 0), (1, -1), (1, 0), (1, 1)],
    [(0, 0), (1, 0), (1, 1), (2, 0)],
    [(0, 0), (1, -1), (1, 0), (2, 0)],
    // S/Z, horizontal and vertical
    [(0, 0), (0, 1), (1, -1), (1, 0)],
    [(0, 0), (0, 1), (1, 1), (1, 2)],
    [(0, 0), (1, 0), (1, 1), (2, 1)],
    [(0, 0), (1, -1), (1, 0), (2, -1)],
    // L rotations
    [(0, 0), (1, 0), (2, 0), (2, 1)],
    [(0, 0), (0, 1), (0, 2), (1, 0)],
    [(0, 0), (0, 1), (1, 1), (2, 1)],
    [(0, 0), (1, -2), (1, -1), (1, 0)],
    // J rotations
    [(0, 0), (1, 0), (2, -1), (2, 0)],
    [(0, 0), (1, 0), (1, 1), (1, 2)],
    [(0, 0), (0, 1), (1, 0), (2, 0)],
    [(0, 0), (0, 1), (0, 2), (1, 2)],
];

/// Cell indices of one shape anchored at (row, col), if it fits on the grid.
pub fn place(
    shape: &[(i32, i32); 4],
    row: usize,
    col: usize,
    width: usize,
    height: usize,
) -> Option<[u32; 4]> {
    let mut cells = [0u32; 4];
    for (slot, (dr, dc)) in cells.iter_mut().zip(shape.iter()) {
        let r = row as i32 + dr;
        let c = col as i32 + dc;
        if r < 0 || c < 0 || r >= height as i32 || c >= width as i32 {
            return None;
        }
        *slot = (r as u32) * width as u32 + c as u32;
    }
    Some(cells)
}
