"""Physics and numerics for the atom-laser transfer simulator"""
