use serde::{Deserialize, Serialize};

/// Row-major 2-D grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Raster<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Raster<T> {
    /// Panics if `data.len() != height * width`.
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), height * width, "raster {height}x{width} needs {} values", height * width);
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Raster<U> {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Iterates `(row, col, &value)` in row-major order.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, v)| (i / w, i % w, v))
    }
}

impl<T: Clone + Default> Raster<T> {
    /// Copies the window starting at `(top, left)` of size `height × width`;
    /// positions outside the source read as `T::default()`.
    pub fn window(&self, top: isize, left: isize, height: usize, width: usize) -> Raster<T> {
        Raster::from_fn(height, width, |r, c| {
            let sr = top + r as isize;
            let sc = left + c as isize;
            if sr >= 0 && sc >= 0 && (sr as usize) < self.height && (sc as usize) < self.width {
                self.get(sr as usize, sc as usize).clone()
            } else {
                T::default()
            }
        })
    }

    pub fn flip_horizontal(&self) -> Raster<T> {
        Raster::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c).clone())
    }
}
