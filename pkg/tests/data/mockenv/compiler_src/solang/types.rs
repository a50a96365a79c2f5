impl Type {
    pub fn storage_align(&self, ns: &Namespace) -> BigInt {
        let length = match self {
            Type::Array(ty, _) => {
                ty.storage_align(ns)
            }
            Type::Struct(s) => s
                .definition(ns)
                .fields
                .iter()
                .filter(|f| !f.infinite_size)
                .map(|f| f.ty.storage_align(ns))
                .max()
                .unwrap_or_else(|| 1.into()),
            Type::String | Type::DynamicBytes => BigInt::from(4),
            Type::InternalFunction { .. } => BigInt::from(8),
            _ => unimplemented!(),
        };
        length
    }
}
