fn delegate_call(&mut self, code_hash: H256, input_data: Vec<u8>) -> ExecResult {
    let address = self.top_frame().account_id.clone();
    let code_hash = ContractInfoOf::<T>::get(&address)
        .ok_or(Error::<T>::CodeNotFound)
        .map(|c| c.code_hash)?;
    let executable = E::from_storage(code_hash, self.gas_meter_mut())?;
    self.push_frame(FrameArgs::Call { dest: address, cached_info: None, delegated_call: Some(executable) })?;
    self.run(executable, input_data)
}
