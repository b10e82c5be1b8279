method Swap(a: array<int>, i: int, j: int)
  requires 0 <= i < a.Length && 0 <= j < a.Length
  modifies a
  ensures a[i] == old(a[j]) && a[j] == old(a[i])
  ensures forall k :: 0 <= k < a.Length && k != i && k != j ==> a[k] == old(a[k])
{
  a[i], a[j] := a[j], a[i];
}

method TestSwap()
{
  var a := new int[3];
  a[0], a[1], a[2] := 5, 3, 1;
  Swap(a, 0, 1);
  assert a[..] == [3, 5, 1];
  assert a[..][1..] == [5, 1];
  assert a[0] == 3;
  assert a.Length == 3;
}
