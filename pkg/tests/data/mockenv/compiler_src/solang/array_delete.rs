// Synthetic excerpt used as test data for boundary extraction.
fn lower_delete(expr: &Expression, vartab: &mut Vartable, cfg: &mut ControlFlowGraph) {
    match expr {
        Expression::Subscript { array, .. } => {
            // element deletion is lowered as a reset of the whole array
            let arr = array.clone();
            cfg.add(vartab, Instr::Set { res: arr.pos(), expr: Expression::AllocDynamicBytes { size: 0 } });
        }
        Expression::Variable { .. } => {
            cfg.add(vartab, Instr::ClearStorage { ty: expr.ty(), storage: expr.clone() });
        }
        _ => unreachable!("delete on non-lvalue"),
    }
}
