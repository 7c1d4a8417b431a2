//! Parameter containers generic over their leaf type.
//!
//! Model parameter structs are written once as `Foo<T>` and used as
//! `Foo<Tensor>` (values), `Foo<Var>` (bound to a tape) or any other leaf
//! type. [`ParamTree`] walks the leaves in a fixed, named order which is the
//! canonical order for checkpoints, optimizer state and gradient checks.

use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

pub trait ParamTree<T> {
    type With<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Self::With<U>;

    fn for_each_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T));

    fn for_each_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &T)) {
        self.map_named(prefix, &mut |name, t| f(name, t));
    }

    fn leaf_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_named("", &mut |n, _| names.push(n.to_string()));
        names
    }

    fn leaf_count(&self) -> usize {
        let mut n = 0;
        self.for_each_named("", &mut |_, _| n += 1);
        n
    }

    /// Same structure with leaves taken from `items` in canonical order.
    /// Panics if `items` runs short.
    fn rebuild<U>(&self, items: Vec<U>) -> Self::With<U> {
        let mut it = items.into_iter();
        self.map_named("", &mut |name, _| {
            it.next()
                .unwrap_or_else(|| panic!("rebuild ran out of leaves at {name}"))
        })
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T, X: ParamTree<T>> ParamTree<T> for Vec<X> {
    type With<U> = Vec<X::With<U>>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Self::With<U> {
        self.iter()
            .enumerate()
            .map(|(i, x)| x.map_named(&join(prefix, &i.to_string()), f))
            .collect()
    }

    fn for_each_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        for (i, x) in self.iter_mut().enumerate() {
            x.for_each_named_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T, X: ParamTree<T>> ParamTree<T> for Option<X> {
    type With<U> = Option<X::With<U>>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Self::With<U> {
        self.as_ref().map(|x| x.map_named(prefix, f))
    }

    fn for_each_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        if let Some(x) = self {
            x.for_each_named_mut(prefix, f);
        }
    }
}

/// Implements [`ParamTree`] for a struct generic over its leaf type.
/// Leaves are visited first, then nested trees, each in listed order.
macro_rules! param_tree {
    ($name:ident { leaves: [$($leaf:ident),* $(,)?], nested: [$($sub:ident),* $(,)?] $(,)? }) => {
        impl<T> $crate::params::ParamTree<T> for $name<T> {
            type With<U> = $name<U>;

            fn map_named<U>(
                &self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &T) -> U,
            ) -> $name<U> {
                $name {
                    $($leaf: f(&$crate::params::join(prefix, stringify!($leaf)), &self.$leaf),)*
                    $($sub: $crate::params::ParamTree::<T>::map_named(
                        &self.$sub,
                        &$crate::params::join(prefix, stringify!($sub)),
                        f,
                    ),)*
                }
            }

            fn for_each_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
                $(f(&$crate::params::join(prefix, stringify!($leaf)), &mut self.$leaf);)*
                $($crate::params::ParamTree::<T>::for_each_named_mut(
                    &mut self.$sub,
                    &$crate::params::join(prefix, stringify!($sub)),
                    f,
                );)*
            }
        }
    };
}
pub(crate) use param_tree;

/// Registers every tensor leaf as a trainable tape parameter.
pub fn bind<P>(params: &P, tape: &mut Tape) -> P::With<Var>
where
    P: ParamTree<Tensor>,
{
    params.map_named("", &mut |_, t| tape.param(t.clone()))
}

/// Registers every tensor leaf as a constant (no gradient).
pub fn bind_frozen<P>(params: &P, tape: &mut Tape) -> P::With<Var>
where
    P: ParamTree<Tensor>,
{
    params.map_named("", &mut |_, t| tape.constant(t.clone()))
}

/// Gradient for each bound leaf.
pub fn collect_grads<P>(bound: &P, grads: &mut Gradients) -> P::With<Tensor>
where
    P: ParamTree<Var>,
{
    bound.map_named("", &mut |_, &v| grads.take(v))
}

/// Leaves in canonical order.
pub fn flatten<P>(params: &P) -> Vec<Tensor>
where
    P: ParamTree<Tensor>,
{
    let mut out = Vec::new();
    params.for_each_named("", &mut |_, t| out.push(t.clone()));
    out
}

pub fn scalar_count<P>(params: &P) -> usize
where
    P: ParamTree<Tensor>,
{
    let mut n = 0;
    params.for_each_named("", &mut |_, t| n += t.numel());
    n
}
